"""Central discovery hub: live nodes, their channels and services.

Protocol: one JSON object per line over TCP.  Requests carry an "op" key:
register, heartbeat, update, deregister, list_nodes, list_services,
lookup_service, snapshot.  Replies carry "ok" plus op-specific payload.
The snapshot document is versioned with "v": 1.

The registry is stateless across restarts; clients re-register on reconnect.
Liveness: a node whose last heartbeat is older than 3 heartbeat periods is
expired and absent from every query.
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field

DEFAULT_PORT = 7660
HEARTBEAT_PERIOD = 1.0
LIVENESS_MISSES = 3

# registry built-ins, advertised with the default-service marker
DEFAULT_SERVICES = ("list_nodes", "list_services", "lookup_service", "deregister")
DEFAULT_SERVICE_MARKER = "__DEFAULT_SERVICE"


def registry_address(explicit: str | None = None) -> tuple[str, int]:
    """Resolve ``host:port`` from the argument or ROBOMESH_REGISTRY."""
    spec = explicit or os.environ.get("ROBOMESH_REGISTRY", f"127.0.0.1:{DEFAULT_PORT}")
    host, _, port = spec.partition(":")
    return host or "127.0.0.1", int(port) if port else DEFAULT_PORT


@dataclass
class ServiceDescriptor:
    service_name: str
    req_fingerprint: int
    rep_fingerprint: int
    is_default: bool = False

    def to_json(self) -> dict:
        return {
            "name": self.service_name,
            "req_fingerprint": self.req_fingerprint,
            "rep_fingerprint": self.rep_fingerprint,
            "is_default": self.is_default,
        }


@dataclass
class NodeRecord:
    node_name: str
    address: list  # transport address token [host, port]
    publishers: list = field(default_factory=list)  # [channel, fingerprint]
    subscribers: list = field(default_factory=list)  # channel filters
    services: list = field(default_factory=list)  # ServiceDescriptor
    last_heartbeat_us: int = 0

    def to_json(self) -> dict:
        return {
            "name": self.node_name,
            "address": list(self.address),
            "publishers": [list(p) for p in self.publishers],
            "subscribers": list(self.subscribers),
            "services": [s.to_json() for s in self.services],
            "last_heartbeat_us": self.last_heartbeat_us,
        }


def _now_us() -> int:
    return time.time_ns() // 1000


class _State:
    """All registry state behind one lock (single-writer consistency)."""

    def __init__(self):
        self.lock = threading.Lock()
        self.nodes: dict[str, NodeRecord] = {}

    def _expire(self) -> None:
        cutoff = _now_us() - int(LIVENESS_MISSES * HEARTBEAT_PERIOD * 1e6)
        dead = [n for n, rec in self.nodes.items() if rec.last_heartbeat_us < cutoff]
        for n in dead:
            del self.nodes[n]

    def handle(self, req: dict) -> dict:
        op = req.get("op")
        with self.lock:
            self._expire()
            if op == "register":
                name = req["name"]
                if name in self.nodes:
                    return {"ok": False, "error": f"node name {name!r} already live"}
                rec = NodeRecord(name, req.get("address", []))
                rec.last_heartbeat_us = _now_us()
                self._apply_update(rec, req)
                self.nodes[name] = rec
                return {"ok": True}
            if op == "heartbeat":
                rec = self.nodes.get(req["name"])
                if rec is None:
                    return {"ok": True, "warning": "unknown node; re-register"}
                rec.last_heartbeat_us = _now_us()
                return {"ok": True}
            if op == "update":
                rec = self.nodes.get(req["name"])
                if rec is None:
                    return {"ok": False, "error": "unknown node; re-register"}
                self._apply_update(rec, req)
                rec.last_heartbeat_us = _now_us()
                return {"ok": True}
            if op == "deregister":
                self.nodes.pop(req.get("name", ""), None)
                return {"ok": True}
            if op == "list_nodes":
                return {"ok": True, "nodes": sorted(self.nodes)}
            if op == "list_services":
                services = [
                    f"__registry/{DEFAULT_SERVICE_MARKER}/{s}" for s in DEFAULT_SERVICES
                ]
                for name, rec in self.nodes.items():
                    services.extend(f"{name}/{s.service_name}" for s in rec.services)
                return {"ok": True, "services": sorted(services)}
            if op == "lookup_service":
                target = req["name"]
                node_name, _, service_name = target.partition("/")
                rec = self.nodes.get(node_name)
                if rec is None:
                    return {"ok": False, "error": f"no live node {node_name!r}"}
                for s in rec.services:
                    if s.service_name == service_name:
                        return {
                            "ok": True,
                            "service": s.to_json(),
                            "address": list(rec.address),
                            "provider": node_name,
                        }
                return {"ok": False, "error": f"no service {target!r}"}
            if op == "snapshot":
                return {
                    "ok": True,
                    "v": 1,
                    "stamp_us": _now_us(),
                    "nodes": [self.nodes[n].to_json() for n in sorted(self.nodes)],
                    "default_services": [
                        f"__registry/{DEFAULT_SERVICE_MARKER}/{s}" for s in DEFAULT_SERVICES
                    ],
                }
            return {"ok": False, "error": f"unknown op {op!r}"}

    @staticmethod
    def _apply_update(rec: NodeRecord, req: dict) -> None:
        if "publishers" in req:
            rec.publishers = [tuple(p) for p in req["publishers"]]
        if "subscribers" in req:
            rec.subscribers = list(req["subscribers"])
        if "services" in req:
            rec.services = [
                ServiceDescriptor(
                    s["name"], s["req_fingerprint"], s["rep_fingerprint"], s.get("is_default", False)
                )
                for s in req["services"]
            ]
        if "address" in req:
            rec.address = list(req["address"])


class RegistryServer:
    """Threaded line-JSON server; one connection handler thread per client."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self._state = _State()
        state = self._state

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                while True:
                    try:
                        line = self.rfile.readline()
                    except OSError:
                        return
                    if not line:
                        return
                    try:
                        req = json.loads(line)
                        reply = state.handle(req)
                    except (ValueError, KeyError, TypeError) as e:
                        reply = {"ok": False, "error": f"bad request: {e}"}
                    try:
                        self.wfile.write(json.dumps(reply).encode() + b"\n")
                    except OSError:
                        return

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.address = self._server.server_address
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.1},
            daemon=True, name="rm-registry",
        )

    def start(self) -> "RegistryServer":
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._thread.start()
        self._thread.join()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def serve_registry(listen: str | None = None) -> RegistryServer:
    host, port = registry_address(listen)
    return RegistryServer(host, port).start()


class RegistryError(ConnectionError):
    pass


class RegistryClient:
    """Thread-safe client; reconnects with backoff and replays registration."""

    def __init__(self, address: tuple[str, int] | str | None = None, connect_timeout: float = 2.0):
        if isinstance(address, str) or address is None:
            address = registry_address(address)
        self.address = tuple(address)
        self.connect_timeout = connect_timeout
        self._sock: socket.socket | None = None
        self._file = None
        self._lock = threading.Lock()
        self._registration: dict | None = None  # replayed after reconnect

    def _connect(self) -> None:
        sock = socket.create_connection(self.address, timeout=self.connect_timeout)
        sock.settimeout(5.0)
        self._sock = sock
        self._file = sock.makefile("rwb")

    def _roundtrip(self, req: dict) -> dict:
        if self._sock is None:
            self._connect()
            if self._registration is not None and req.get("op") != "register":
                self._send_line(self._registration)
        return self._send_line(req)

    def _send_line(self, req: dict) -> dict:
        self._file.write(json.dumps(req).encode() + b"\n")
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ConnectionError("registry closed connection")
        return json.loads(line)

    def call(self, req: dict, retries: int = 1) -> dict:
        with self._lock:
            last_err: Exception | None = None
            for attempt in range(retries + 1):
                try:
                    return self._roundtrip(req)
                except (OSError, ValueError) as e:
                    last_err = e
                    self._drop()
                    if attempt < retries:
                        time.sleep(0.2 * (attempt + 1))
            raise RegistryError(f"registry unreachable at {self.address}: {last_err}")

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._file = None

    # -- high-level ops --

    def register(self, record: dict) -> None:
        req = {"op": "register", **record}
        reply = self.call(req)
        if not reply.get("ok"):
            raise RegistryError(reply.get("error", "registration rejected"))
        self._registration = req

    def heartbeat(self, name: str) -> dict:
        return self.call({"op": "heartbeat", "name": name})

    def update(self, name: str, **fields) -> None:
        reply = self.call({"op": "update", "name": name, **fields})
        if not reply.get("ok"):
            # registry restarted and lost us: re-register
            if self._registration is not None:
                self._registration.update(fields)
                self.call(self._registration)
            else:
                raise RegistryError(reply.get("error", "update rejected"))
        elif self._registration is not None:
            self._registration.update(fields)

    def deregister(self, name: str) -> None:
        self._registration = None
        try:
            self.call({"op": "deregister", "name": name}, retries=0)
        except RegistryError:
            pass

    def list_nodes(self) -> list[str]:
        return self.call({"op": "list_nodes"})["nodes"]

    def list_services(self) -> list[str]:
        return self.call({"op": "list_services"})["services"]

    def lookup_service(self, name: str) -> dict:
        reply = self.call({"op": "lookup_service", "name": name})
        if not reply.get("ok"):
            raise KeyError(reply.get("error", f"no service {name!r}"))
        return reply

    def snapshot(self) -> dict:
        return self.call({"op": "snapshot"})

    def close(self) -> None:
        with self._lock:
            self._drop()
