"""Websocket bridge: the network's window for browsers.

Serves static dashboard assets over HTTP and a JSON protocol on ``/ws``.
Frames to the client (all carry "type"): hello, topology, sample, map,
pose, path, ack, error.  Commands from the client: subscribe, unsubscribe,
teleop, set_goal, reset.

The bridge is a pure adapter: teleop becomes a twist_2d_t on ``__ui/teleop``
(last writer wins across clients), set_goal and reset become ordinary
service calls whose replies are forwarded.  Per-client output is a bounded
queue (256 frames); overflow drops the oldest sample/map/pose frames and
never topology, acks or errors.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import schema as sc
from . import standard
from .registry import RegistryError
from .runtime import RemoteServiceError, ServiceTimeout

PROTOCOL_VERSION = 1
SAMPLE_MIN_INTERVAL = 0.1  # 10 Hz per channel per client
MAP_MIN_INTERVAL = 1.0
TOPOLOGY_MIN_INTERVAL = 1.0
QUEUE_LIMIT = 256
_DROPPABLE = ("sample", "map", "pose", "path")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}

_PLACEHOLDER = """<!doctype html>
<html><head><title>robomesh bridge</title></head>
<body><h1>robomesh bridge</h1>
<p>No dashboard assets found. Build the frontend (see frontend/README.md)
and point the bridge at it with <code>static_dir</code>, or talk to
<code>/ws</code> directly.</p></body></html>
"""


def rle_encode(values: np.ndarray) -> list[list[int]]:
    """Run-length encode a 1-D u8 array as [value, count] pairs."""
    if len(values) == 0:
        return []
    changes = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate([[0], changes])
    ends = np.concatenate([changes, [len(values)]])
    return [[int(values[s]), int(e - s)] for s, e in zip(starts, ends)]


def quantize_grid(cells: list[float]) -> np.ndarray:
    return np.clip(np.round(np.asarray(cells) * 255.0), 0, 255).astype(np.uint8)


@dataclass(eq=False)
class _Client:
    ws: object
    critical: asyncio.Queue = field(default_factory=asyncio.Queue)
    samples: object = None  # deque-backed bounded queue
    subscriptions: set = field(default_factory=set)
    last_sample: dict = field(default_factory=dict)
    last_map: float = 0.0
    wake: asyncio.Event = field(default_factory=asyncio.Event)

    def __post_init__(self):
        from collections import deque

        self.samples = deque()

    def push(self, frame: dict) -> None:
        if frame["type"] in _DROPPABLE:
            if len(self.samples) >= QUEUE_LIMIT:
                self.samples.popleft()
            self.samples.append(frame)
        else:
            self.critical.put_nowait(frame)
        self.wake.set()


class BridgeNode:
    def __init__(self, node, http_port: int = 8480, static_dir=None,
                 pose_channel: str = "slam/pose", map_channel: str = "slam/map",
                 path_channel: str = "nav/path", goal_service: str = "nav/set_goal",
                 reset_service: str = "robot/reset", teleop_channel: str = "__ui/teleop",
                 poll_interval: float = 0.05):
        self.node = node
        self.http_port = http_port
        self.port: int | None = None
        self.static_dir = Path(static_dir) if static_dir else None
        self.goal_service = goal_service
        self.reset_service = reset_service
        self.teleop_channel = teleop_channel
        self.poll_interval = poll_interval
        self.ready = threading.Event()

        self.sub_pose = node.create_subscriber(pose_channel, standard.pose_2d_t)
        self.sub_map = node.create_subscriber(map_channel, standard.occupancy_grid_t,
                                              queue_capacity=2)
        self.sub_path = node.create_subscriber(path_channel, standard.path_2d_t)
        node.declare_service_types(goal_service, standard.pose_2d_t, standard.set_goal_reply_t)
        node.declare_service_types(reset_service, standard.reset_request_t, standard.reset_reply_t)
        self._twist_fp = sc.fingerprint(standard.twist_2d_t)
        # decoding samples for arbitrary channels: match live fingerprints to
        # the standard schema set
        self._by_fp = {sc.fingerprint(s): s for s in standard.STANDARD_SCHEMAS.values()}
        self._raw_subs: dict[str, object] = {}
        self._clients: set[_Client] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stopping: asyncio.Event | None = None
        self._last_topology: dict | None = None

    # -- static assets --

    def _serve_static(self, connection, request):
        if request.path == "/ws":
            return None
        path = request.path.split("?")[0]
        if path == "/":
            path = "/index.html"
        if self.static_dir is not None:
            target = (self.static_dir / path.lstrip("/")).resolve()
            if target.is_file() and self.static_dir.resolve() in target.parents:
                from websockets.datastructures import Headers
                from websockets.http11 import Response

                body = target.read_bytes()
                headers = Headers(
                    {
                        "Content-Type": _CONTENT_TYPES.get(
                            target.suffix, "application/octet-stream"
                        ),
                        "Content-Length": str(len(body)),
                        "Connection": "close",
                    }
                )
                return Response(200, "OK", headers, body)
        if path == "/index.html":
            return connection.respond(200, _PLACEHOLDER)
        return connection.respond(404, "not found\n")

    # -- frames --

    def _topology_frame(self) -> dict | None:
        try:
            snap = self.node._registry.snapshot()
        except RegistryError:
            return None
        nodes = [
            {
                "name": rec["name"],
                "publishers": rec.get("publishers", []),
                "subscribers": rec.get("subscribers", []),
                "services": [s["name"] for s in rec.get("services", [])],
            }
            for rec in snap.get("nodes", [])
        ]
        return {"type": "topology", "v": PROTOCOL_VERSION, "nodes": nodes}

    def _map_frame(self, grid_msg: dict, t_us: int) -> dict:
        return {
            "type": "map",
            "t_us": t_us,
            "width": grid_msg["width"],
            "height": grid_msg["height"],
            "resolution": grid_msg["resolution"],
            "origin": grid_msg["origin"],
            "rle": rle_encode(quantize_grid(grid_msg["cells"])),
        }

    # -- client handling --

    async def _handler(self, ws):
        client = _Client(ws)
        self._clients.add(client)
        client.push({"type": "hello", "v": PROTOCOL_VERSION})
        topo = self._topology_frame()
        if topo is not None:
            self._last_topology = topo
            client.push(topo)
        writer = asyncio.create_task(self._writer(client))
        try:
            async for raw in ws:
                await self._on_message(client, raw)
        except Exception:
            pass
        finally:
            self._clients.discard(client)
            writer.cancel()

    async def _writer(self, client: _Client) -> None:
        while True:
            await client.wake.wait()
            client.wake.clear()
            while not client.critical.empty() or client.samples:
                if not client.critical.empty():
                    frame = client.critical.get_nowait()
                else:
                    frame = client.samples.popleft()
                await client.ws.send(json.dumps(frame))

    async def _on_message(self, client: _Client, raw) -> None:
        try:
            msg = json.loads(raw)
            cmd = msg["type"]
        except (ValueError, TypeError, KeyError):
            client.push({"type": "error", "reason": "malformed JSON command"})
            return
        if cmd == "subscribe":
            channel = str(msg.get("channel", ""))
            client.subscriptions.add(channel)
            if channel not in self._raw_subs:
                self._raw_subs[channel] = self.node.create_raw_subscriber(channel, 64)
            client.push({"type": "ack", "cmd": "subscribe", "channel": channel})
        elif cmd == "unsubscribe":
            client.subscriptions.discard(str(msg.get("channel", "")))
            client.push({"type": "ack", "cmd": "unsubscribe"})
        elif cmd == "teleop":
            try:
                payload = sc.encode(
                    standard.twist_2d_t,
                    {"v": float(msg.get("v", 0.0)), "w": float(msg.get("w", 0.0))},
                )
            except (TypeError, ValueError, sc.EncodeError):
                client.push({"type": "error", "reason": "bad teleop command"})
                return
            self.node.publish_raw(self.teleop_channel, self._twist_fp, payload)
        elif cmd == "set_goal":
            await self._call(client, "set_goal", self.goal_service,
                             {"x": float(msg.get("x", 0.0)), "y": float(msg.get("y", 0.0)),
                              "theta": 0.0})
        elif cmd == "reset":
            await self._call(client, "reset", self.reset_service,
                             {"has_pose": False, "pose": {"x": 0.0, "y": 0.0, "theta": 0.0}})
        else:
            client.push({"type": "error", "reason": f"unknown command {cmd!r}"})

    async def _call(self, client: _Client, cmd: str, target: str, request: dict) -> None:
        def blocking():
            return self.node.call_service(target, request, timeout=3.0)

        try:
            reply = await asyncio.to_thread(blocking)
        except ServiceTimeout:
            client.push({"type": "error", "cmd": cmd, "reason": "timeout"})
            return
        except (RemoteServiceError, RegistryError) as e:
            client.push({"type": "error", "cmd": cmd, "reason": str(e)})
            return
        ack = {"type": "ack", "cmd": cmd}
        ack.update(reply if isinstance(reply, dict) else {})
        if not reply.get("ok", True):
            client.push({"type": "error", "cmd": cmd,
                         "reason": reply.get("message", "rejected")})
        else:
            client.push(ack)

    # -- polling --

    async def _poller(self) -> None:
        last_topo_t = 0.0
        while True:
            now = time.monotonic()
            if now - last_topo_t >= TOPOLOGY_MIN_INTERVAL:
                last_topo_t = now
                topo = self._topology_frame()
                if topo is not None and topo != self._last_topology:
                    self._last_topology = topo
                    for client in self._clients:
                        client.push(topo)
            for value, t_us in self.sub_pose.take_new()[-1:]:
                frame = {"type": "pose", "t_us": t_us, **value}
                for client in self._clients:
                    client.push(frame)
            for value, t_us in self.sub_path.take_new()[-1:]:
                frame = {"type": "path", "t_us": t_us, "xs": value["xs"], "ys": value["ys"]}
                for client in self._clients:
                    client.push(frame)
            latest_map = self.sub_map.latest()
            if latest_map is not None:
                value, t_us = latest_map
                for client in self._clients:
                    if now - client.last_map >= MAP_MIN_INTERVAL:
                        client.last_map = now
                        client.push(self._map_frame(value, t_us))
            for channel, sub in self._raw_subs.items():
                for env in sub.drain():
                    schema = self._by_fp.get(env.fingerprint)
                    if schema is None:
                        continue
                    try:
                        value = sc.decode(schema, env.payload)
                    except sc.DecodeError:
                        continue
                    frame = {"type": "sample", "channel": channel,
                             "t_us": env.recv_time_us, "value": value}
                    for client in self._clients:
                        if channel not in client.subscriptions:
                            continue
                        if now - client.last_sample.get(channel, 0.0) < SAMPLE_MIN_INTERVAL:
                            continue  # decimate to <= 10 Hz
                        client.last_sample[channel] = now
                        client.push(frame)
            if self.node.is_shutdown:
                self._stopping.set()
                return
            await asyncio.sleep(self.poll_interval)

    # -- lifecycle --

    async def _main(self) -> None:
        from websockets.asyncio.server import serve

        self._stopping = asyncio.Event()
        async with serve(self._handler, "127.0.0.1", self.http_port,
                         process_request=self._serve_static) as server:
            self.port = server.sockets[0].getsockname()[1]
            poller = asyncio.create_task(self._poller())
            self.ready.set()
            try:
                await self._stopping.wait()
            finally:
                poller.cancel()

    def run(self) -> None:
        self._loop = asyncio.new_event_loop()
        try:
            self._loop.run_until_complete(self._main())
        finally:
            self._loop.close()

    def stop(self) -> None:
        if self._loop is not None and self._stopping is not None:
            self._loop.call_soon_threadsafe(self._stopping.set)
