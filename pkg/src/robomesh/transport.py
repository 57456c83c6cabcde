"""Connectionless pub-sub datagram transport.

Wire layout (all integers big-endian, normative and bit-exact):

    SHORT  magic "ARK1" | fingerprint u64 | sequence u64 | send_time_us u64
           | channel_len u8 | channel | payload

    FRAG   magic "ARKF" | message_id u64 | fragment_index u32
           | fragment_count u32 | (envelope header as in SHORT, fragment 0
           only) | payload slice

Payloads larger than one datagram are split into ceil(len/F) fragments with
F = max_datagram - 45 - len(channel), so fragment 0 (which carries the full
envelope header) is exactly max_datagram bytes when the payload is large
enough.  Reassembly is permutation-invariant and duplicate-tolerant; partial
messages are evicted after REASSEMBLY_TIMEOUT or when the buffer cap is hit.

Two delivery modes:

  * multicast -- one UDP socket joined to a group; the deployment default.
  * peer list -- each endpoint binds an ephemeral loopback port and sends to
    an explicit set of peer addresses (learned from the registry and from
    incoming datagram source addresses).  Used when multicast is unavailable
    and in tests.

An endpoint always delivers its own publications to its local subscriptions
directly, without touching the socket; its own packets looped back by the
kernel in multicast mode are recognized and dropped.
"""

from __future__ import annotations

import os
import random
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

MAGIC_SHORT = b"ARK1"
MAGIC_FRAG = b"ARKF"
_ENVELOPE_HEADER = struct.Struct(">QQQB")  # fingerprint, sequence, send_time_us, channel_len
_FRAG_HEADER = struct.Struct(">QII")  # message_id, fragment_index, fragment_count

MAX_PAYLOAD = 64 * 1024 * 1024
REASSEMBLY_TIMEOUT = 1.0
DEDUP_WINDOW = 2.0
DEFAULT_UDP = "239.255.76.67:7667?ttl=0"


class TransportError(OSError):
    pass


@dataclass(frozen=True)
class Envelope:
    channel: str
    fingerprint: int
    sequence: int
    send_time_us: int
    payload: bytes
    recv_time_us: int = 0


@dataclass
class EndpointConfig:
    """`udp` is either "loopback" (peer mode) or "GROUP:PORT[?ttl=N]"."""

    udp: str = ""
    max_datagram: int = 1400
    queue_capacity: int = 64
    reassembly_cap: int = 64 * 1024 * 1024
    bind_port: int = 0  # peer mode only; 0 = ephemeral

    def __post_init__(self):
        if not self.udp:
            self.udp = os.environ.get("ROBOMESH_UDP", DEFAULT_UDP)
        if self.max_datagram < 512:
            raise ValueError("max_datagram must be >= 512")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")


def _parse_group(udp: str) -> tuple[str, int, int]:
    addr, _, query = udp.partition("?")
    host, _, port = addr.partition(":")
    ttl = 0
    if query.startswith("ttl="):
        ttl = int(query[4:])
    return host, int(port), ttl


def match_filter(channel_filter: str, channel: str) -> bool:
    if channel_filter.endswith("*"):
        return channel.startswith(channel_filter[:-1])
    return channel == channel_filter


class Subscription:
    """Bounded FIFO of envelopes for one channel filter."""

    def __init__(self, channel_filter: str, capacity: int):
        self.channel_filter = channel_filter
        self.capacity = capacity
        self.drop_count = 0
        self._queue: deque[Envelope] = deque()
        self._cond = threading.Condition()
        self._closed = False

    def _push(self, env: Envelope) -> None:
        with self._cond:
            if len(self._queue) >= self.capacity:
                self._queue.popleft()
                self.drop_count += 1
            self._queue.append(env)
            self._cond.notify()

    def recv(self, timeout: float | None = None) -> Envelope | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._queue:
                if self._closed:
                    return None
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return None
                self._cond.wait(remaining)
            return self._queue.popleft()

    def drain(self) -> list[Envelope]:
        with self._cond:
            out = list(self._queue)
            self._queue.clear()
            return out

    def __len__(self) -> int:
        with self._cond:
            return len(self._queue)

    def _close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


@dataclass
class _Partial:
    fragments: dict[int, bytes] = field(default_factory=dict)
    count: int = 0
    header: tuple | None = None  # (channel, fingerprint, sequence, send_time_us)
    deadline: float = 0.0
    size: int = 0


class _SeenSet:
    """Time-windowed membership set with O(1) amortized expiry."""

    def __init__(self, window: float):
        self.window = window
        self._items: dict = {}
        self._order: deque = deque()

    def add(self, key) -> None:
        now = time.monotonic()
        if key not in self._items:
            self._order.append((now, key))
        self._items[key] = now
        cutoff = now - self.window
        while self._order and self._order[0][0] < cutoff:
            t, k = self._order.popleft()
            if self._items.get(k) == t:
                del self._items[k]

    def __contains__(self, key) -> bool:
        return key in self._items

    def discard(self, key) -> None:
        self._items.pop(key, None)


def _now_us() -> int:
    return time.time_ns() // 1000


def build_packets(
    channel: str,
    fingerprint: int,
    sequence: int,
    send_time_us: int,
    msg_id: int,
    payload: bytes,
    max_datagram: int,
) -> list[bytes]:
    """Encode one envelope into SHORT or FRAG datagrams (normative layout)."""
    raw_channel = channel.encode("utf-8")
    if len(raw_channel) > 255:
        raise TransportError(f"channel name exceeds 255 bytes: {channel!r}")
    if len(payload) > MAX_PAYLOAD:
        raise TransportError(f"payload of {len(payload)} bytes exceeds 64 MiB")
    header = (
        _ENVELOPE_HEADER.pack(fingerprint, sequence, send_time_us, len(raw_channel))
        + raw_channel
    )
    short = MAGIC_SHORT + header + payload
    if len(short) <= max_datagram:
        return [short]
    chunk = max_datagram - 45 - len(raw_channel)
    count = -(-len(payload) // chunk)
    packets = []
    for idx in range(count):
        part = MAGIC_FRAG + _FRAG_HEADER.pack(msg_id, idx, count)
        if idx == 0:
            part += header
        packets.append(part + payload[idx * chunk : (idx + 1) * chunk])
    return packets


class Endpoint:
    """Shareable pub-sub endpoint; publish is thread-safe."""

    def __init__(self, config: EndpointConfig | None = None):
        self.config = config or EndpointConfig()
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()
        self._seq: dict[str, int] = {}
        self._peers: set[tuple[str, int]] = set()
        self._partials: dict[tuple, _Partial] = {}
        self._partial_bytes = 0
        self._seen = _SeenSet(DEDUP_WINDOW)  # rx thread only
        self._self_keys = _SeenSet(DEDUP_WINDOW)  # guarded by _lock
        self._msg_id = random.getrandbits(63)
        self._closed = False

        if self.config.udp == "loopback":
            self.multicast = False
            self._group = None
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            try:
                self._sock.bind(("127.0.0.1", self.config.bind_port))
            except OSError as e:
                self._sock.close()
                raise TransportError(f"bind failed: {e}") from e
        else:
            host, port, ttl = _parse_group(self.config.udp)
            self._group = (host, port)
            try:
                self._sock = self._open_multicast(host, port, ttl)
                self.multicast = True
            except OSError:
                # multicast unavailable: fall back to the loopback peer list
                self.multicast = False
                self._group = None
                self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                self._sock.bind(("127.0.0.1", self.config.bind_port))
        try:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 * 1024 * 1024)
        except OSError:
            pass
        self.address = self._sock.getsockname()
        self._rx_thread = threading.Thread(target=self._rx_loop, daemon=True, name="rm-endpoint-rx")
        self._rx_thread.start()

    @staticmethod
    def _open_multicast(host: str, port: int, ttl: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        except (AttributeError, OSError):
            pass
        sock.bind(("", port))
        mreq = struct.pack("4sl", socket.inet_aton(host), socket.INADDR_ANY)
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, ttl)
        # loop=1 so other endpoints on this host receive our packets; our own
        # copies are filtered by _self_keys
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        return sock

    # -- peer management (peer mode only; harmless no-ops under multicast) --

    def add_peer(self, host: str, port: int) -> None:
        if (host, port) != tuple(self.address):
            with self._lock:
                self._peers.add((host, port))

    def set_peers(self, peers) -> None:
        with self._lock:
            self._peers = {tuple(p) for p in peers if tuple(p) != tuple(self.address)}

    # -- publishing --

    def publish(self, channel: str, fingerprint: int, payload: bytes) -> None:
        if len(channel.encode("utf-8")) > 255:
            raise TransportError(f"channel name exceeds 255 bytes: {channel!r}")
        if len(payload) > MAX_PAYLOAD:
            raise TransportError(f"payload of {len(payload)} bytes exceeds 64 MiB")
        send_time_us = _now_us()
        with self._lock:
            seq = self._seq.get(channel, 0) + 1
            self._seq[channel] = seq
            msg_id = self._msg_id
            self._msg_id = (self._msg_id + 1) & ((1 << 64) - 1)
            if self.multicast:
                self._self_keys.add(("s", channel, seq, send_time_us))
                self._self_keys.add(("f", msg_id))
        packets = build_packets(
            channel, fingerprint, seq, send_time_us, msg_id, payload, self.config.max_datagram
        )
        for pkt in packets:
            self._send(pkt)
        env = Envelope(channel, fingerprint, seq, send_time_us, payload, _now_us())
        self._deliver_local(env)

    def _send(self, pkt: bytes) -> None:
        if self._closed:
            return
        if self.multicast:
            try:
                self._sock.sendto(pkt, self._group)
            except OSError:
                pass
            return
        with self._lock:
            peers = list(self._peers)
        for peer in peers:
            try:
                self._sock.sendto(pkt, peer)
            except OSError:
                pass

    def _deliver_local(self, env: Envelope) -> None:
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            if match_filter(sub.channel_filter, env.channel):
                sub._push(env)

    # -- subscribing --

    def subscribe(self, channel_filter: str, queue_capacity: int | None = None) -> Subscription:
        sub = Subscription(channel_filter, queue_capacity or self.config.queue_capacity)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
        sub._close()

    # -- receive path (single rx thread owns reassembly and dedup state) --

    def _rx_loop(self) -> None:
        while not self._closed:
            try:
                pkt, src = self._sock.recvfrom(65536)
            except OSError:
                return
            if not self.multicast:
                self.add_peer(*src)  # learn peers from traffic
            env = self._accept(pkt, src)
            if env is not None:
                self._deliver_local(env)

    def _accept(self, pkt: bytes, src) -> Envelope | None:
        now = time.monotonic()
        if self._partials:
            self._gc_partials(now)
        if pkt[:4] == MAGIC_SHORT:
            parsed = self._parse_envelope(pkt[4:])
            if parsed is None:
                return None
            channel, fingerprint, seq, send_time_us, payload = parsed
            if self.multicast:
                with self._lock:
                    if ("s", channel, seq, send_time_us) in self._self_keys:
                        return None
            key = ("s", src, channel, seq, send_time_us)
            if key in self._seen:
                return None
            self._seen.add(key)
            return Envelope(channel, fingerprint, seq, send_time_us, payload, _now_us())
        if pkt[:4] == MAGIC_FRAG:
            return self._accept_fragment(pkt, src, now)
        return None

    @staticmethod
    def _parse_envelope(data: bytes):
        if len(data) < _ENVELOPE_HEADER.size:
            return None
        fingerprint, seq, send_time_us, channel_len = _ENVELOPE_HEADER.unpack_from(data)
        rest = data[_ENVELOPE_HEADER.size :]
        if len(rest) < channel_len:
            return None
        try:
            channel = rest[:channel_len].decode("utf-8")
        except UnicodeDecodeError:
            return None
        return channel, fingerprint, seq, send_time_us, rest[channel_len:]

    def _accept_fragment(self, pkt: bytes, src, now: float) -> Envelope | None:
        body = pkt[4:]
        if len(body) < _FRAG_HEADER.size:
            return None
        msg_id, index, count = _FRAG_HEADER.unpack_from(body)
        if count == 0 or index >= count:
            return None
        if self.multicast:
            with self._lock:
                if ("f", msg_id) in self._self_keys:
                    return None
        rest = body[_FRAG_HEADER.size :]
        key = ("f", src, msg_id)
        if key in self._seen:
            return None

        part = self._partials.get(key)
        if part is None:
            part = _Partial(count=count, deadline=now + REASSEMBLY_TIMEOUT)
            self._partials[key] = part
        if index == 0:
            parsed = self._parse_envelope(rest)
            if parsed is None:
                return None
            channel, fingerprint, seq, send_time_us, slice0 = parsed
            part.header = (channel, fingerprint, seq, send_time_us)
            data = slice0
        else:
            data = rest
        if index not in part.fragments:
            part.fragments[index] = data
            part.size += len(data)
            self._partial_bytes += len(data)
            self._enforce_cap(keep=key)

        if part.header is None or len(part.fragments) < part.count:
            return None
        payload = b"".join(part.fragments[i] for i in range(part.count))
        channel, fingerprint, seq, send_time_us = part.header
        self._drop_partial(key)
        self._seen.add(key)
        return Envelope(channel, fingerprint, seq, send_time_us, payload, _now_us())

    def _drop_partial(self, key) -> None:
        part = self._partials.pop(key, None)
        if part is not None:
            self._partial_bytes -= part.size

    def _enforce_cap(self, keep) -> None:
        while self._partial_bytes > self.config.reassembly_cap and len(self._partials) > 1:
            oldest = min(
                (k for k in self._partials if k != keep),
                key=lambda k: self._partials[k].deadline,
                default=None,
            )
            if oldest is None:
                return
            self._drop_partial(oldest)

    def _gc_partials(self, now: float) -> None:
        expired = [k for k, p in self._partials.items() if p.deadline <= now]
        for k in expired:
            self._drop_partial(k)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        # wake the rx thread out of recvfrom
        host, port = self.address
        if host in ("0.0.0.0", ""):
            host = "127.0.0.1"
        try:
            wake = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            wake.sendto(b"", (host, port))
            wake.close()
        except OSError:
            pass
        self._rx_thread.join(timeout=1.0)
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub._close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_endpoint(config: EndpointConfig | None = None) -> Endpoint:
    return Endpoint(config)
