"""Read-only introspection: network graph, channel statistics, channel tap.

All three attach as passive observers; a network behaves identically with
or without them.
"""

from __future__ import annotations

import json
import math
import sys
import time
from collections import defaultdict, deque
from dataclasses import dataclass

from . import schema as sc
from . import standard


# ---------------------------------------------------------------------------
# graph


def build_graph(snapshot: dict) -> dict:
    """Registry snapshot -> deterministic bipartite topology document."""
    nodes = sorted(rec["name"] for rec in snapshot.get("nodes", []))
    channels: set[str] = set()
    services: list[str] = []
    publishes: list[tuple[str, str]] = []  # node -> channel
    subscribes: list[tuple[str, str]] = []  # channel -> node
    for rec in snapshot.get("nodes", []):
        for channel, _fp in rec.get("publishers", []):
            channels.add(channel)
            publishes.append((rec["name"], channel))
        for channel_filter in rec.get("subscribers", []):
            channels.add(channel_filter)
            subscribes.append((channel_filter, rec["name"]))
        for svc in rec.get("services", []):
            services.append(f"{rec['name']}/{svc['name']}")
    return {
        "v": 1,
        "nodes": nodes,
        "channels": sorted(channels),
        "services": sorted(services),
        "publishes": sorted(publishes),
        "subscribes": sorted(subscribes),
    }


def graph_to_dot(doc: dict) -> str:
    lines = ["digraph robomesh {", "  rankdir=LR;"]
    for name in doc["nodes"]:
        lines.append(f'  "node:{name}" [shape=box, label="{name}"];')
    for channel in doc["channels"]:
        lines.append(f'  "chan:{channel}" [shape=ellipse, label="{channel}"];')
    for service in doc["services"]:
        lines.append(f'  "svc:{service}" [shape=diamond, label="{service}"];')
        provider = service.split("/")[0]
        lines.append(f'  "node:{provider}" -> "svc:{service}" [style=dashed];')
    for node, channel in doc["publishes"]:
        lines.append(f'  "node:{node}" -> "chan:{channel}";')
    for channel, node in doc["subscribes"]:
        lines.append(f'  "chan:{channel}" -> "node:{node}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def render_graph(registry_client, fmt: str = "dot") -> str:
    doc = build_graph(registry_client.snapshot())
    if fmt == "json":
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if fmt == "dot":
        return graph_to_dot(doc)
    raise ValueError(f"unknown graph format {fmt!r}")


# ---------------------------------------------------------------------------
# spy


@dataclass
class ChannelRow:
    channel: str
    count: int
    rate_hz: float
    jitter_ms: float
    fingerprint: int


class ChannelStats:
    """Envelope arrival statistics over a sliding window.

    Works purely from receive times; payloads are never decoded.
    """

    def __init__(self, window_s: float = 5.0):
        self.window_us = int(window_s * 1e6)
        self.totals: dict[str, int] = defaultdict(int)
        self.last_fp: dict[str, int] = {}
        self._times: dict[str, deque[int]] = defaultdict(deque)

    def add(self, channel: str, recv_time_us: int, fingerprint: int) -> None:
        self.totals[channel] += 1
        self.last_fp[channel] = fingerprint
        q = self._times[channel]
        q.append(recv_time_us)
        cutoff = recv_time_us - self.window_us
        while q and q[0] < cutoff:
            q.popleft()

    def rows(self, now_us: int | None = None) -> list[ChannelRow]:
        out = []
        for channel in sorted(self.totals):
            q = self._times[channel]
            if now_us is not None:
                cutoff = now_us - self.window_us
                while q and q[0] < cutoff:
                    q.popleft()
            n = len(q)
            span = self.window_us / 1e6
            rate = n / span
            jitter_ms = 0.0
            if n >= 3:
                gaps = [(q[i + 1] - q[i]) / 1e3 for i in range(n - 1)]
                mean = sum(gaps) / len(gaps)
                jitter_ms = math.sqrt(sum((g - mean) ** 2 for g in gaps) / len(gaps))
            out.append(ChannelRow(channel, self.totals[channel], rate, jitter_ms,
                                  self.last_fp.get(channel, 0)))
        return out


def format_spy_table(rows: list[ChannelRow]) -> str:
    header = f"{'CHANNEL':<32} {'COUNT':>8} {'RATE[Hz]':>9} {'JITTER[ms]':>10}  FINGERPRINT"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.channel:<32} {r.count:>8} {r.rate_hz:>9.1f} {r.jitter_ms:>10.2f}  {r.fingerprint:016x}"
        )
    return "\n".join(lines)


def run_spy(node, channel_filter: str = "*", window_s: float = 5.0,
            duration_s: float | None = None, as_json: bool = False,
            out=sys.stdout, refresh_hz: float = 2.0) -> ChannelStats:
    """Attach to the network and print statistics until duration elapses."""
    stats = ChannelStats(window_s)
    sub = node.create_raw_subscriber(channel_filter, queue_capacity=4096)
    deadline = None if duration_s is None else time.monotonic() + duration_s
    try:
        while deadline is None or time.monotonic() < deadline:
            t_end = time.monotonic() + 1.0 / refresh_hz
            while time.monotonic() < t_end:
                env = sub.recv(timeout=max(t_end - time.monotonic(), 0.0))
                if env is not None:
                    stats.add(env.channel, env.recv_time_us, env.fingerprint)
            rows = stats.rows(time.time_ns() // 1000)
            if as_json:
                out.write(json.dumps([r.__dict__ for r in rows]) + "\n")
            else:
                out.write("\x1b[2J\x1b[H" if out.isatty() else "")
                out.write(format_spy_table(rows) + "\n")
            out.flush()
            if node.is_shutdown:
                break
    except KeyboardInterrupt:
        pass
    return stats


# ---------------------------------------------------------------------------
# tap


def run_tap(node, channel: str, schema_name: str, duration_s: float | None = None,
            csv_field: str | None = None, out=sys.stdout, err=sys.stderr,
            max_messages: int | None = None) -> int:
    """Print decoded messages as JSON lines, or one numeric field as CSV rows.

    Returns the number of messages emitted; fingerprint mismatches warn and
    continue.
    """
    try:
        schema = standard.lookup(schema_name)
    except KeyError as e:
        raise ValueError(str(e)) from None
    if csv_field is not None:
        valid = {path for path, leaf, _ in sc.iter_leaf_paths(schema)
                 if isinstance(leaf, str) and leaf not in ("string",)}
        if csv_field not in valid:
            raise ValueError(f"{csv_field!r} is not a numeric field of {schema_name}; "
                             f"numeric fields: {sorted(valid)}")
    want_fp = sc.fingerprint(schema)
    sub = node.create_raw_subscriber(channel, queue_capacity=4096)
    if csv_field is not None:
        out.write("t_us,value\n")
    emitted = 0
    deadline = None if duration_s is None else time.monotonic() + duration_s
    try:
        while deadline is None or time.monotonic() < deadline:
            timeout = 0.2 if deadline is None else max(min(0.2, deadline - time.monotonic()), 0.0)
            env = sub.recv(timeout=timeout)
            if env is None:
                if node.is_shutdown:
                    break
                continue
            if env.fingerprint != want_fp:
                err.write(
                    f"warning: {env.channel}: fingerprint {env.fingerprint:016x} "
                    f"!= {schema_name} {want_fp:016x}; skipped\n"
                )
                continue
            try:
                value = sc.decode(schema, env.payload)
            except sc.DecodeError as e:
                err.write(f"warning: {env.channel}: {e}\n")
                continue
            if csv_field is not None:
                out.write(f"{env.recv_time_us},{sc.get_path(value, csv_field)}\n")
            else:
                out.write(json.dumps({"t_us": env.recv_time_us, "channel": env.channel,
                                      "value": value}) + "\n")
            out.flush()
            emitted += 1
            if max_messages is not None and emitted >= max_messages:
                break
    except KeyboardInterrupt:
        pass
    return emitted
