"""Teleoperation command sources and the publishing node.

Commands (v, w) come from one of three sources: terminal keys, a scripted
(t, v, w) CSV used by every headless run, or dashboard messages relayed by
the bridge on ``__ui/teleop``.  The node publishes twist_2d_t at 20 Hz while
input is fresh; 500 ms after the last input it publishes zeros for a short
burst (dead-man) and then goes quiet so an autonomous controller can own the
command channel without being fought over.
"""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import standard

DEADMAN_S = 0.5
ZERO_BURST_S = 0.5
V_STEP = 0.1
W_STEP = 0.2


@dataclass
class Command:
    v: float = 0.0
    w: float = 0.0


class ScriptedSource:
    """Replays a (t, v, w) table; the script counts as continuous operator
    input until its last row plus the dead-man window."""

    def __init__(self, rows):
        self.rows = sorted((float(t), float(v), float(w)) for t, v, w in rows)
        if not self.rows:
            raise ValueError("empty teleop script")

    @classmethod
    def from_csv(cls, path) -> "ScriptedSource":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].lstrip().startswith("#"):
                    continue
                if rec[0].strip().lower() in ("t", "time"):
                    continue  # header
                rows.append((float(rec[0]), float(rec[1]), float(rec[2])))
        return cls(rows)

    @property
    def duration(self) -> float:
        return self.rows[-1][0]

    def command_at(self, t: float) -> Command:
        cmd = Command()
        for row_t, v, w in self.rows:
            if row_t <= t:
                cmd = Command(v, w)
            else:
                break
        return cmd

    def poll(self, t: float) -> tuple[Command | None, float | None]:
        """(command, last_input_time); input stays fresh through the script."""
        if t <= self.rows[-1][0]:
            return self.command_at(t), t
        return self.command_at(t), self.rows[-1][0]


class KeyboardSource:
    """Raw-terminal WASD/arrow input; space zeroes, q quits."""

    ARROWS = {"A": "w", "B": "s", "C": "d", "D": "a"}

    def __init__(self, v_step=V_STEP, w_step=W_STEP, v_max=1.0, w_max=2.0):
        self.cmd = Command()
        self.v_step = v_step
        self.w_step = w_step
        self.v_max = v_max
        self.w_max = w_max
        self.last_input: float | None = None
        self.quit = False

    def apply_key(self, key: str, now: float) -> None:
        key = self.ARROWS.get(key, key).lower()
        if key == "w":
            self.cmd.v += self.v_step
        elif key == "s":
            self.cmd.v -= self.v_step
        elif key == "a":
            self.cmd.w += self.w_step
        elif key == "d":
            self.cmd.w -= self.w_step
        elif key == " ":
            self.cmd = Command()
        elif key == "q":
            self.quit = True
            return
        else:
            return
        self.cmd.v = max(-self.v_max, min(self.v_max, self.cmd.v))
        self.cmd.w = max(-self.w_max, min(self.w_max, self.cmd.w))
        self.last_input = now

    def pump_stdin(self, now: float) -> None:  # pragma: no cover - needs a tty
        import os
        import select

        while select.select([sys.stdin], [], [], 0)[0]:
            ch = os.read(sys.stdin.fileno(), 1).decode(errors="ignore")
            if ch == "\x1b":  # arrow escape sequence
                seq = os.read(sys.stdin.fileno(), 2).decode(errors="ignore")
                ch = seq[-1] if seq else ""
            self.apply_key(ch, now)

    def poll(self, t: float) -> tuple[Command | None, float | None]:
        if sys.stdin.isatty():  # pragma: no cover - needs a tty
            self.pump_stdin(t)
        return self.cmd, self.last_input


class BridgeSource:
    """Takes commands from dashboard messages relayed on ``__ui/teleop``."""

    def __init__(self, node, channel: str = "__ui/teleop"):
        self._sub = node.create_subscriber(channel, standard.twist_2d_t)
        self.cmd = Command()
        self.last_input: float | None = None

    def poll(self, t: float) -> tuple[Command | None, float | None]:
        latest = self._sub.latest()
        if latest is not None:
            value, recv_us = latest
            if self.last_input is None or recv_us / 1e6 > self.last_input:
                self.cmd = Command(value["v"], value["w"])
                self.last_input = recv_us / 1e6
        return self.cmd, self.last_input


class TeleopNode:
    """Publishes held commands at a fixed rate with dead-man zeroing."""

    def __init__(self, node, source, channel_suffix: str = "twist",
                 rate_hz: float = 20.0, clock=time.monotonic):
        self.node = node
        self.source = source
        self.rate_hz = rate_hz
        self.clock = clock
        self.pub = node.create_publisher(channel_suffix, standard.twist_2d_t)
        self._start = clock()
        self._quiet_after: float | None = None
        self.published: int = 0

    def step(self, dt: float) -> None:
        now = self.clock() - self._start
        cmd, last_input = self.source.poll(now)
        if getattr(self.source, "quit", False):
            self.node.request_shutdown()
            return
        if cmd is None:
            return
        stale = last_input is None or (now - last_input) > DEADMAN_S
        if stale:
            zero_since = (last_input or 0.0) + DEADMAN_S
            if now > zero_since + ZERO_BURST_S:
                return  # quiescent: let other command sources own the channel
            cmd = Command()
        self.pub.publish({"v": cmd.v, "w": cmd.w})
        self.published += 1

    def run(self) -> None:
        self.node.spin(self.rate_hz, on_step=self.step)
