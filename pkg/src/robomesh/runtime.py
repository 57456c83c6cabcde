"""Nodes: named processes owning publishers, subscribers and services.

Every user channel is ``node_name/suffix``; reserved channels start with
``__``.  Services ride the same transport on reserved channels::

    __srv/<node>/<service>/req
    __srv/<node>/<service>/rep/<caller_token>

Requests carry a fresh 64-bit correlation id; the caller retries every
timeout/4 and the provider deduplicates by correlation id (re-sending the
cached reply), which gives effectively-once semantics over lossy UDP.
"""

from __future__ import annotations

import random
import threading
import time
from collections import deque

from . import schema as sc
from .registry import RegistryClient, RegistryError, HEARTBEAT_PERIOD
from .transport import Endpoint, EndpointConfig, Envelope

# wrapper schemas for the service mechanism (plumbing, not user-visible)
SRV_REQUEST_T = sc.MessageSchema(
    "__srv_request_t",
    (
        sc.Field("correlation", "i64"),
        sc.Field("reply_channel", "string"),
        sc.Field("req_fingerprint", "i64"),
        sc.Field("payload", sc.ArrayType("i8")),
    ),
)
SRV_REPLY_T = sc.MessageSchema(
    "__srv_reply_t",
    (
        sc.Field("correlation", "i64"),
        sc.Field("ok", "bool"),
        sc.Field("error", "string"),
        sc.Field("payload", sc.ArrayType("i8")),
    ),
)
_SRV_REQ_FP = sc.fingerprint(SRV_REQUEST_T)
_SRV_REP_FP = sc.fingerprint(SRV_REPLY_T)

SERVICE_DEDUP_WINDOW = 30.0


def _to_i8(raw: bytes) -> list[int]:
    return [b - 256 if b > 127 else b for b in raw]


def _from_i8(vals: list[int]) -> bytes:
    return bytes(v & 0xFF for v in vals)


def _u64_to_i64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _i64_to_u64(v: int) -> int:
    return v + (1 << 64) if v < 0 else v


class ServiceTimeout(TimeoutError):
    pass


class RemoteServiceError(RuntimeError):
    pass


class Publisher:
    def __init__(self, node: "NodeHandle", channel: str, schema: sc.MessageSchema):
        self.node = node
        self.channel = channel
        self.schema = schema
        self.fingerprint = sc.fingerprint(schema)

    def publish(self, value) -> None:
        payload = sc.encode(self.schema, value)
        self.node._endpoint.publish(self.channel, self.fingerprint, payload)


class Subscriber:
    """Decodes envelopes under one schema; wrong-fingerprint traffic is counted
    and discarded, never delivered."""

    def __init__(self, node, channel, schema, queue_capacity, callback=None):
        self.node = node
        self.channel = channel
        self.schema = schema
        self.fingerprint = sc.fingerprint(schema)
        self.callback = callback
        self.mismatch_count = 0
        self.decode_errors = 0
        self._latest = None  # (value, recv_time_us)
        self._lock = threading.Lock()
        # decoded-but-unconsumed ring; read by either the spin callback
        # dispatch or take_new(), whichever the owner uses
        self._pending = deque(maxlen=queue_capacity or 64)
        self._sub = node._endpoint.subscribe(channel, queue_capacity)

    def _process(self, env: Envelope):
        if env.fingerprint != self.fingerprint:
            self.mismatch_count += 1
            return None
        try:
            value = sc.decode(self.schema, env.payload)
        except sc.DecodeError:
            self.decode_errors += 1
            return None
        with self._lock:
            if self._latest is None or env.recv_time_us >= self._latest[1]:
                self._latest = (value, env.recv_time_us)
            self._pending.append((value, env.recv_time_us))
        return value, env.recv_time_us

    def _drain(self) -> None:
        for env in self._sub.drain():
            self._process(env)

    def take_new(self) -> list:
        """All decoded (value, recv_time_us) pairs since the last call."""
        self._drain()
        with self._lock:
            out = list(self._pending)
            self._pending.clear()
        return out

    def latest(self):
        """Most recent decoded (value, recv_time_us), or None."""
        self._drain()
        with self._lock:
            return self._latest

    def wait_for_message(self, timeout: float):
        """Block until one new message decodes; returns (value, recv_time_us) or None."""
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            env = self._sub.recv(timeout=remaining)
            if env is None:
                return None
            got = self._process(env)
            if got is not None:
                return got


class _Service:
    def __init__(self, name, req_schema, rep_schema, handler):
        self.name = name
        self.req_schema = req_schema
        self.rep_schema = rep_schema
        self.req_fp = sc.fingerprint(req_schema)
        self.rep_fp = sc.fingerprint(rep_schema)
        self.handler = handler


class NodeHandle:
    """A named process on the network; operated by one logical owner thread.

    Publishers are additionally safe to use from other threads.
    """

    def __init__(
        self,
        name: str,
        registry: str | tuple | None = None,
        endpoint_config: EndpointConfig | None = None,
    ):
        if not name or "/" in name or name.startswith("__"):
            raise ValueError(f"bad node name {name!r}")
        self.name = name
        self._endpoint = Endpoint(endpoint_config)
        self._registry = RegistryClient(registry, connect_timeout=0.8)
        self._publishers: dict[str, Publisher] = {}
        self._subscribers: list[Subscriber] = []
        self._raw_filters: list[str] = []
        self._services: dict[str, _Service] = {}
        self._service_replies: dict[int, tuple[float, str, bytes]] = {}
        self._call_schemas: dict[str, tuple[sc.MessageSchema, sc.MessageSchema]] = {}
        self._shutdown = threading.Event()

        try:
            self._registry.register({"name": name, "address": list(self._endpoint.address)})
        except RegistryError:
            self._endpoint.close()
            raise
        self._refresh_peers()

        # requests for any of this node's services arrive under one filter
        self._srv_sub = self._endpoint.subscribe(f"__srv/{name}/*", 128)
        self._srv_thread = threading.Thread(
            target=self._service_loop, daemon=True, name=f"rm-{name}-srv"
        )
        self._srv_thread.start()
        self._hb_thread = threading.Thread(
            target=self._heartbeat_loop, daemon=True, name=f"rm-{name}-hb"
        )
        self._hb_thread.start()

    # -- registry bookkeeping --

    def _record_update(self) -> dict:
        return {
            "publishers": [[p.channel, p.fingerprint] for p in self._publishers.values()],
            "subscribers": [s.channel for s in self._subscribers] + list(self._raw_filters),
            "services": [
                {"name": s.name, "req_fingerprint": s.req_fp, "rep_fingerprint": s.rep_fp}
                for s in self._services.values()
            ],
            "address": list(self._endpoint.address),
        }

    def _push_update(self) -> None:
        try:
            self._registry.update(self.name, **self._record_update())
        except RegistryError:
            pass  # heartbeat loop retries

    def _refresh_peers(self) -> None:
        if self._endpoint.multicast:
            return
        try:
            snap = self._registry.snapshot()
        except RegistryError:
            return
        for node in snap.get("nodes", []):
            addr = node.get("address") or []
            if len(addr) == 2:
                self._endpoint.add_peer(addr[0], addr[1])

    def _heartbeat_loop(self) -> None:
        while not self._shutdown.wait(HEARTBEAT_PERIOD):
            try:
                reply = self._registry.heartbeat(self.name)
                if reply.get("warning"):  # registry restarted: re-register
                    self._registry.register(
                        {"name": self.name, **self._record_update()}
                    )
            except RegistryError:
                continue
            self._refresh_peers()

    # -- pub/sub --

    def create_publisher(self, suffix: str, schema: sc.MessageSchema) -> Publisher:
        if not suffix or "/" in suffix:
            raise ValueError(f"bad channel suffix {suffix!r}")
        if suffix in self._publishers:
            raise ValueError(f"publisher for {suffix!r} already exists on {self.name}")
        pub = Publisher(self, f"{self.name}/{suffix}", schema)
        self._publishers[suffix] = pub
        self._push_update()
        return pub

    def publish_raw(self, channel: str, fingerprint: int, payload: bytes) -> None:
        """Republish pre-encoded bytes (log replay, UI bridge)."""
        self._endpoint.publish(channel, fingerprint, payload)

    def create_subscriber(
        self,
        channel: str,
        schema: sc.MessageSchema,
        queue_capacity: int | None = None,
        callback=None,
    ) -> Subscriber:
        sub = Subscriber(self, channel, schema, queue_capacity, callback)
        self._subscribers.append(sub)
        self._push_update()
        return sub

    def create_raw_subscriber(self, channel_filter: str, queue_capacity: int | None = None):
        """Undecoded envelope subscription (recorder, spy, bridge)."""
        sub = self._endpoint.subscribe(channel_filter, queue_capacity)
        self._raw_filters.append(channel_filter)
        self._push_update()
        return sub

    # -- services --

    def advertise_service(self, service_name, req_schema, rep_schema, handler) -> None:
        if service_name in self._services:
            raise ValueError(f"service {service_name!r} already advertised on {self.name}")
        self._services[service_name] = _Service(service_name, req_schema, rep_schema, handler)
        self._push_update()

    def _service_loop(self) -> None:
        prefix = f"__srv/{self.name}/"
        while not self._shutdown.is_set():
            env = self._srv_sub.recv(timeout=0.2)
            if env is None:
                continue
            parts = env.channel[len(prefix):].split("/")
            if len(parts) != 2 or parts[1] != "req":
                continue  # our own replies loop back on this filter
            self._handle_request(parts[0], env)

    def _handle_request(self, service_name: str, env: Envelope) -> None:
        if env.fingerprint != _SRV_REQ_FP:
            return
        try:
            wrapper = sc.decode(SRV_REQUEST_T, env.payload)
        except sc.DecodeError:
            return
        correlation = wrapper["correlation"]
        reply_channel = wrapper["reply_channel"]
        now = time.monotonic()

        cached = self._service_replies.get(correlation)
        if cached is not None:  # duplicate from caller retry: resend, no re-invoke
            _, ch, payload = cached
            self._endpoint.publish(ch, _SRV_REP_FP, payload)
            return

        service = self._services.get(service_name)
        if service is None:
            reply = {"correlation": correlation, "ok": False,
                     "error": f"no service {service_name!r} on {self.name}", "payload": []}
        elif _i64_to_u64(wrapper["req_fingerprint"]) != service.req_fp:
            reply = {
                "correlation": correlation, "ok": False,
                "error": (
                    f"request schema mismatch: got {_i64_to_u64(wrapper['req_fingerprint']):016x}, "
                    f"want {service.req_fp:016x}"
                ),
                "payload": [],
            }
        else:
            try:
                request = sc.decode(service.req_schema, _from_i8(wrapper["payload"]))
                result = service.handler(request)
                reply = {
                    "correlation": correlation, "ok": True, "error": "",
                    "payload": _to_i8(sc.encode(service.rep_schema, result)),
                }
            except Exception as e:  # handler errors travel back to the caller
                reply = {"correlation": correlation, "ok": False,
                         "error": f"{type(e).__name__}: {e}", "payload": []}

        payload = sc.encode(SRV_REPLY_T, reply)
        self._service_replies[correlation] = (now, reply_channel, payload)
        if len(self._service_replies) > 256:
            cutoff = now - SERVICE_DEDUP_WINDOW
            self._service_replies = {
                k: v for k, v in self._service_replies.items() if v[0] > cutoff
            }
        self._endpoint.publish(reply_channel, _SRV_REP_FP, payload)

    def declare_service_types(self, target: str, req_schema, rep_schema) -> None:
        """Bind the local value types for a ``node/service`` target."""
        self._call_schemas[target] = (req_schema, rep_schema)

    def call_service(
        self,
        target: str,
        request,
        timeout: float = 5.0,
        req_schema: sc.MessageSchema | None = None,
        rep_schema: sc.MessageSchema | None = None,
    ):
        """Call ``node/service``; returns the decoded reply value.

        Transmission is at-least-once (retry every timeout/4); correlation
        ids keep concurrent calls separated.
        """
        provider, _, service_name = target.partition("/")
        if not service_name:
            raise ValueError(f"service target must be node/service, got {target!r}")
        if req_schema is None or rep_schema is None:
            pair = self._call_schemas.get(target)
            if pair is None:
                raise ValueError(f"call_service({target!r}): no schemas declared")
            req_schema, rep_schema = pair
        try:
            hit = self._registry.lookup_service(target)
        except KeyError as e:
            raise ServiceTimeout(f"service {target!r} not found: {e}") from None
        desc = hit["service"]
        if sc.fingerprint(req_schema) != desc["req_fingerprint"]:
            raise RemoteServiceError(
                f"request schema mismatch for {target!r}: local "
                f"{sc.fingerprint(req_schema):016x} != advertised {desc['req_fingerprint']:016x}"
            )
        if sc.fingerprint(rep_schema) != desc["rep_fingerprint"]:
            raise RemoteServiceError(
                f"reply schema mismatch for {target!r}: local "
                f"{sc.fingerprint(rep_schema):016x} != advertised {desc['rep_fingerprint']:016x}"
            )
        addr = hit.get("address") or []
        if len(addr) == 2:
            self._endpoint.add_peer(addr[0], addr[1])

        correlation = random.getrandbits(63)
        token = f"{random.getrandbits(48):012x}"
        reply_channel = f"__srv/{provider}/{service_name}/rep/{token}"
        reply_sub = self._endpoint.subscribe(reply_channel, 8)
        try:
            payload = sc.encode(
                SRV_REQUEST_T,
                {
                    "correlation": correlation,
                    "reply_channel": reply_channel,
                    "req_fingerprint": _u64_to_i64(desc["req_fingerprint"]),
                    "payload": _to_i8(sc.encode(req_schema, request)),
                },
            )
            request_channel = f"__srv/{provider}/{service_name}/req"
            deadline = time.monotonic() + timeout
            retry_gap = timeout / 4
            next_send = 0.0
            while True:
                now = time.monotonic()
                if now >= deadline:
                    raise ServiceTimeout(f"service call {target!r} timed out after {timeout}s")
                if now >= next_send:
                    self._endpoint.publish(request_channel, _SRV_REQ_FP, payload)
                    next_send = now + retry_gap
                wait = min(next_send, deadline) - time.monotonic()
                env = reply_sub.recv(timeout=max(wait, 0.0))
                if env is None or env.fingerprint != _SRV_REP_FP:
                    continue
                try:
                    rep = sc.decode(SRV_REPLY_T, env.payload)
                except sc.DecodeError:
                    continue
                if rep["correlation"] != correlation:
                    continue
                if not rep["ok"]:
                    raise RemoteServiceError(rep["error"])
                return sc.decode(rep_schema, _from_i8(rep["payload"]))
        finally:
            self._endpoint.unsubscribe(reply_sub)

    # -- main loop --

    def spin(self, rate_hz: float, on_step=None, max_steps: int | None = None) -> int:
        """Run the node loop at rate_hz; returns the number of steps taken.

        Drains subscription callbacks between steps; a callback exception
        shuts the node down (deregistering it) and re-raises.
        """
        if rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        period = 1.0 / rate_hz
        steps = 0
        last = time.monotonic()
        next_tick = last + period
        try:
            while not self._shutdown.is_set():
                self._dispatch_callbacks()
                now = time.monotonic()
                if now < next_tick:
                    self._shutdown.wait(next_tick - now)
                    if self._shutdown.is_set():
                        break
                now = time.monotonic()
                dt = now - last
                last = now
                next_tick += period
                if next_tick < now:  # fell behind: don't burst to catch up
                    next_tick = now + period
                if on_step is not None:
                    on_step(dt)
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
        except BaseException:
            self.shutdown()
            raise
        return steps

    def _dispatch_callbacks(self) -> None:
        for sub in list(self._subscribers):
            if sub.callback is None:
                continue
            for value, _ in sub.take_new():
                sub.callback(value)

    def request_shutdown(self) -> None:
        self._shutdown.set()

    @property
    def is_shutdown(self) -> bool:
        return self._shutdown.is_set()

    def shutdown(self) -> None:
        already = self._shutdown.is_set()
        self._shutdown.set()
        if already and self._endpoint._closed:
            return
        try:
            self._registry.deregister(self.name)
        except Exception:
            pass
        self._registry.close()
        self._endpoint.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def create_node(
    name: str,
    registry: str | tuple | None = None,
    endpoint_config: EndpointConfig | None = None,
) -> NodeHandle:
    return NodeHandle(name, registry, endpoint_config)
