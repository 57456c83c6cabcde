"""Bring up a whole network of nodes from one YAML file.

Config shape::

    global:
      sim: true              # the single sim-real switch, exported as ROBOMESH_SIM
      registry: internal     # or "host:port"; internal embeds the registry here
      udp: loopback          # or "GROUP:PORT?ttl=N"
    nodes:
      - name: robot
        kind: sim2d          # builtin kind, or use `command: [...]`
        args: {world: world.yaml}
        env: {EXTRA: "1"}
        restart: never       # or on-failure (backoff 1,2,4,... capped at 30 s)

Validation is all-or-nothing: nothing spawns if any finding is an error.
Supervisor teardown signals children and escalates to SIGKILL after 5 s.
Exit codes: 0 clean, 2 validation error, 3 child failure under restart:never.
"""

from __future__ import annotations

import json
import os
import re
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .registry import RegistryServer

BUILTIN_KINDS = ("sim2d", "stub_hw", "slam", "nav", "bridge", "env_demo", "teleop")
_ADDR_RE = re.compile(r"^[\w.\-]+:\d+(\?ttl=\d+)?$")

KILL_GRACE_S = 5.0
BACKOFF_STEPS = (1.0, 2.0, 4.0, 8.0, 16.0, 30.0)


@dataclass
class Finding:
    path: str
    message: str
    level: str = "error"

    def __str__(self):
        return f"{self.level}: {self.path}: {self.message}"


@dataclass
class NodeSpec:
    name: str
    kind: str | None = None
    command: list[str] | None = None
    args: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    restart: str = "never"


@dataclass
class LaunchConfig:
    sim: bool = True
    registry: str = "internal"
    udp: str = "loopback"
    nodes: list[NodeSpec] = field(default_factory=list)


class LaunchError(ValueError):
    pass


def parse_config(path) -> tuple[LaunchConfig, list[Finding]]:
    findings: list[Finding] = []
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise LaunchError(f"{where}: {e.problem or 'YAML parse error'}") from e
    except OSError as e:
        raise LaunchError(str(e)) from e
    if not isinstance(raw, dict):
        raise LaunchError(f"{path}: config must be a mapping")

    g = raw.get("global", {}) or {}
    cfg = LaunchConfig()
    if "sim" not in g:
        findings.append(Finding("global.sim", "absent; defaulting to true", "warning"))
    else:
        cfg.sim = bool(g["sim"])
    cfg.registry = str(g.get("registry", "internal"))
    if cfg.registry != "internal" and not _ADDR_RE.match(cfg.registry):
        findings.append(Finding("global.registry", f"bad address {cfg.registry!r}"))
    cfg.udp = str(g.get("udp", "loopback"))
    if cfg.udp != "loopback" and not _ADDR_RE.match(cfg.udp):
        findings.append(Finding("global.udp", f"bad address {cfg.udp!r}"))

    seen = set()
    for i, item in enumerate(raw.get("nodes", []) or []):
        where = f"nodes[{i}]"
        if not isinstance(item, dict) or "name" not in item:
            findings.append(Finding(where, "each node needs at least a name"))
            continue
        spec = NodeSpec(
            name=str(item["name"]),
            kind=item.get("kind"),
            command=list(item["command"]) if "command" in item else None,
            args=dict(item.get("args", {}) or {}),
            env={k: str(v) for k, v in (item.get("env", {}) or {}).items()},
            restart=str(item.get("restart", "never")),
        )
        if spec.name in seen:
            findings.append(Finding(f"{where}.name", f"duplicate node name {spec.name!r}"))
        seen.add(spec.name)
        if not spec.name or "/" in spec.name:
            findings.append(Finding(f"{where}.name", f"bad node name {spec.name!r}"))
        if spec.kind is None and spec.command is None:
            findings.append(Finding(where, "needs either kind or command"))
        if spec.kind is not None and spec.command is not None:
            findings.append(Finding(where, "kind and command are mutually exclusive"))
        if spec.kind is not None and spec.kind not in BUILTIN_KINDS:
            findings.append(
                Finding(f"{where}.kind", f"unknown builtin {spec.kind!r}; known: {', '.join(BUILTIN_KINDS)}")
            )
        if spec.restart not in ("never", "on-failure"):
            findings.append(Finding(f"{where}.restart", f"must be never or on-failure, got {spec.restart!r}"))
        if "ROBOMESH_SIM" in spec.env:
            findings.append(Finding(f"{where}.env", "per-node sim override; the global flag is authoritative", "warning"))
        cfg.nodes.append(spec)
    return cfg, findings


def validate(path) -> list[Finding]:
    """Full static check without spawning anything."""
    _, findings = parse_config(path)
    return findings


@dataclass
class _Child:
    spec: NodeSpec
    proc: subprocess.Popen | None = None
    restarts: int = 0
    next_restart: float = 0.0
    gave_up: bool = False
    failed: bool = False


class Supervisor:
    def __init__(self, config_path, out=sys.stdout, backoff_scale: float = 1.0):
        self.config_path = Path(config_path)
        self.out = out
        self.backoff_scale = backoff_scale
        self.config, self.findings = parse_config(config_path)
        self._children: list[_Child] = []
        self._registry: RegistryServer | None = None
        self._stop = threading.Event()
        self._log_threads: list[threading.Thread] = []

    # -- lifecycle --

    def start(self) -> None:
        errors = [f for f in self.findings if f.level == "error"]
        if errors:
            raise LaunchError("; ".join(str(f) for f in errors))
        for f in self.findings:
            self._log("launch", str(f))
        if self.config.registry == "internal":
            self._registry = RegistryServer(port=0).start()
            host, port = self._registry.address
            self.registry_address = f"{host}:{port}"
        else:
            self.registry_address = self.config.registry
        for spec in self.config.nodes:
            child = _Child(spec)
            self._children.append(child)
            self._spawn(child)

    def _child_env(self, spec: NodeSpec) -> dict:
        env = dict(os.environ)
        env["ROBOMESH_SIM"] = "1" if self.config.sim else "0"
        env["ROBOMESH_REGISTRY"] = self.registry_address
        env["ROBOMESH_UDP"] = self.config.udp
        env.update(spec.env)
        return env

    def _argv(self, spec: NodeSpec) -> list[str]:
        if spec.command is not None:
            return spec.command
        return [
            sys.executable, "-m", "robomesh", "node", spec.kind,
            "--name", spec.name, "--args", json.dumps(spec.args),
        ]

    def _spawn(self, child: _Child) -> None:
        child.proc = subprocess.Popen(
            self._argv(child.spec),
            env=self._child_env(child.spec),
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            bufsize=1,
            cwd=str(self.config_path.parent),
        )
        self._log(child.spec.name, f"started pid {child.proc.pid}")
        t = threading.Thread(target=self._pump_logs, args=(child,), daemon=True)
        t.start()
        self._log_threads.append(t)

    def _pump_logs(self, child: _Child) -> None:
        proc = child.proc
        if proc is None or proc.stdout is None:
            return
        for line in proc.stdout:
            self._log(child.spec.name, line.rstrip("\n"))

    def _log(self, name: str, line: str) -> None:
        self.out.write(f"[{name}] {line}\n")
        self.out.flush()

    def poll(self) -> None:
        """One supervision pass: reap exits, apply restart policy."""
        now = time.monotonic()
        for child in self._children:
            proc = child.proc
            if proc is None:
                if child.spec.restart == "on-failure" and not child.gave_up and now >= child.next_restart:
                    self._spawn(child)
                continue
            code = proc.poll()
            if code is None:
                continue
            self._log(child.spec.name, f"exited with code {code}")
            child.proc = None
            if code == 0:
                continue
            child.failed = True
            if child.spec.restart == "on-failure":
                step = BACKOFF_STEPS[min(child.restarts, len(BACKOFF_STEPS) - 1)]
                child.restarts += 1
                child.next_restart = now + step * self.backoff_scale
                self._log(child.spec.name, f"restarting in {step * self.backoff_scale:.1f} s")

    def run(self, duration: float | None = None) -> int:
        """Supervise until signalled (or duration in tests); returns exit code."""
        deadline = None if duration is None else time.monotonic() + duration
        try:
            while not self._stop.is_set():
                self.poll()
                if deadline is not None and time.monotonic() >= deadline:
                    break
                if all(
                    c.proc is None and (c.spec.restart == "never" or c.gave_up)
                    for c in self._children
                ):
                    break
                time.sleep(0.1)
        except KeyboardInterrupt:
            pass
        self.stop()
        if any(c.failed and c.spec.restart == "never" for c in self._children):
            return 3
        return 0

    def stop(self) -> None:
        self._stop.set()
        for child in self._children:
            if child.proc is not None and child.proc.poll() is None:
                try:
                    child.proc.send_signal(signal.SIGTERM)
                except OSError:
                    pass
        deadline = time.monotonic() + KILL_GRACE_S
        for child in self._children:
            proc = child.proc
            if proc is None:
                continue
            remaining = max(deadline - time.monotonic(), 0.0)
            try:
                proc.wait(timeout=remaining)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
            self._log(child.spec.name, "stopped")
            child.proc = None
        if self._registry is not None:
            self._registry.close()
            self._registry = None

    def pids(self) -> list[int]:
        return [c.proc.pid for c in self._children if c.proc is not None and c.proc.poll() is None]


def launch(config_path, duration: float | None = None, out=sys.stdout) -> int:
    try:
        sup = Supervisor(config_path, out=out)
        sup.start()
    except LaunchError as e:
        out.write(f"validation failed: {e}\n")
        return 2
    return sup.run(duration)
