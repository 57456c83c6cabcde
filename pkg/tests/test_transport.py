from __future__ import annotations

import random
import socket
import time

import pytest

from robomesh.transport import (
    Endpoint,
    EndpointConfig,
    TransportError,
    build_packets,
    match_filter,
)


def loopback_pair():
    a = Endpoint(EndpointConfig(udp="loopback"))
    b = Endpoint(EndpointConfig(udp="loopback"))
    a.add_peer(*b.address)
    b.add_peer(*a.address)
    return a, b


def test_filter_semantics():
    assert match_filter("simnode/*", "simnode/scan")
    assert not match_filter("simnode/*", "slam/pose")
    assert match_filter("slam/pose", "slam/pose")
    assert not match_filter("slam/pose", "slam/pose2")


def test_short_packet_layout_golden():
    pkts = build_packets("n/c", 0x1122334455667788, 7, 1_000_000, 99, b"\xab\xcd", 1400)
    assert len(pkts) == 1
    expected = (
        b"ARK1"
        + bytes.fromhex("1122334455667788")
        + (7).to_bytes(8, "big")
        + (1_000_000).to_bytes(8, "big")
        + bytes([3])
        + b"n/c"
        + b"\xab\xcd"
    )
    assert pkts[0] == expected


def test_one_mib_payload_makes_777_fragments():
    # F = 1400 - 45 - len("a/big") = 1350; ceil(2**20 / 1350) = 777
    payload = bytes(1 << 20)
    pkts = build_packets("a/big", 1, 1, 0, 42, payload, 1400)
    assert len(pkts) == 777
    assert all(p[:4] == b"ARKF" for p in pkts)
    assert len(pkts[0]) == 1400  # fragment 0 carries the envelope header
    # reassembled slices restore the payload
    body = b"".join(p[20 + 25 + 5 :] if i == 0 else p[20:] for i, p in enumerate(pkts))
    assert body == payload


def test_small_payload_single_short_packet():
    pkts = build_packets("x/y", 5, 1, 0, 0, bytes(100), 1400)
    assert len(pkts) == 1 and pkts[0][:4] == b"ARK1"


def test_oversize_channel_and_payload_rejected():
    ep = Endpoint(EndpointConfig(udp="loopback"))
    try:
        with pytest.raises(TransportError):
            ep.publish("c" * 300, 0, b"")
        with pytest.raises(TransportError):
            ep.publish("a/b", 0, bytes(64 * 1024 * 1024 + 1))
    finally:
        ep.close()


def test_loopback_self_delivery():
    with Endpoint(EndpointConfig(udp="loopback")) as ep:
        sub = ep.subscribe("me/chat")
        ep.publish("me/chat", 123, b"hello")
        env = sub.recv(timeout=1.0)
        assert env is not None
        assert env.payload == b"hello" and env.fingerprint == 123 and env.sequence == 1


def test_two_endpoints_see_each_other_peer_mode():
    a, b = loopback_pair()
    try:
        sub = b.subscribe("a/out")
        a.publish("a/out", 9, b"ping")
        env = sub.recv(timeout=2.0)
        assert env is not None and env.payload == b"ping"
    finally:
        a.close()
        b.close()


def test_two_endpoints_see_each_other_multicast():
    try:
        a = Endpoint(EndpointConfig(udp="239.255.76.67:17761?ttl=0"))
    except OSError:
        pytest.skip("multicast unavailable")
    b = Endpoint(EndpointConfig(udp="239.255.76.67:17761?ttl=0"))
    if not (a.multicast and b.multicast):
        a.close()
        b.close()
        pytest.skip("multicast unavailable")
    try:
        sub_b = b.subscribe("a/out")
        sub_a = a.subscribe("a/out")
        time.sleep(0.1)
        a.publish("a/out", 9, b"ping")
        env = sub_b.recv(timeout=2.0)
        assert env is not None and env.payload == b"ping"
        # sender sees exactly its own local copy, not a looped duplicate
        assert sub_a.recv(timeout=0.5) is not None
        assert sub_a.recv(timeout=0.3) is None
    finally:
        a.close()
        b.close()


def test_bind_same_exclusive_port_fails():
    a = Endpoint(EndpointConfig(udp="loopback"))
    try:
        with pytest.raises(TransportError):
            Endpoint(EndpointConfig(udp="loopback", bind_port=a.address[1]))
    finally:
        a.close()


def test_queue_drops_oldest_when_full():
    with Endpoint(EndpointConfig(udp="loopback")) as ep:
        sub = ep.subscribe("n/x", queue_capacity=64)
        for i in range(65):
            ep.publish("n/x", 0, bytes([i % 256]))
        assert sub.drop_count == 1
        assert len(sub) == 64
        first = sub.recv(timeout=0.1)
        assert first.payload == bytes([1])  # message 0 was dropped


def test_recv_timeout_returns_none():
    with Endpoint(EndpointConfig(udp="loopback")) as ep:
        sub = ep.subscribe("n/x")
        t0 = time.monotonic()
        assert sub.recv(timeout=0.01) is None
        assert time.monotonic() - t0 < 0.5


def test_loopback_order_preserved():
    a, b = loopback_pair()
    try:
        sub = b.subscribe("a/seq", queue_capacity=200)
        for i in range(100):
            a.publish("a/seq", 0, i.to_bytes(4, "big"))
        got = []
        for _ in range(100):
            env = sub.recv(timeout=2.0)
            assert env is not None
            got.append(int.from_bytes(env.payload, "big"))
            assert env.sequence == got[-1] + 1
        assert got == list(range(100))
    finally:
        a.close()
        b.close()


def test_fragment_permutation_and_duplication():
    rng = random.Random(5)
    a, b = loopback_pair()
    try:
        payload = rng.randbytes(200_000)
        pkts = build_packets("a/blob", 77, 1, 123456, 999, payload, 1400)
        assert len(pkts) > 100
        sub = b.subscribe("a/blob")
        order = pkts + pkts[:: 2]  # duplicate half of them
        rng.shuffle(order)
        raw = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for pkt in order:
            raw.sendto(pkt, tuple(b.address))
        raw.close()
        env = sub.recv(timeout=3.0)
        assert env is not None
        assert env.payload == payload and env.fingerprint == 77
        assert sub.recv(timeout=0.3) is None  # exactly one delivery
    finally:
        a.close()
        b.close()


def test_incomplete_fragments_evicted():
    a, b = loopback_pair()
    try:
        payload = bytes(10_000)
        pkts = build_packets("a/blob", 0, 1, 0, 1234, payload, 1400)
        sub = b.subscribe("a/blob")
        raw = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for pkt in pkts[:-1]:  # lose the last fragment
            raw.sendto(pkt, tuple(b.address))
        assert sub.recv(timeout=0.3) is None
        time.sleep(1.1)  # reassembly timeout
        raw.sendto(b"ARK1" + bytes(25), tuple(b.address))  # tick gc
        time.sleep(0.1)
        assert b._partials == {}
        raw.close()
    finally:
        a.close()
        b.close()


def test_reassembly_cap_evicts_oldest_partial():
    cfg = EndpointConfig(udp="loopback", reassembly_cap=30_000)
    with Endpoint(cfg) as ep:
        raw = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        # three incomplete 20 KB messages exceed the 30 KB cap
        for msg_id in (1, 2, 3):
            pkts = build_packets("a/x", 0, msg_id, 0, msg_id, bytes(20_000), 1400)
            for pkt in pkts[:-1]:
                raw.sendto(pkt, tuple(ep.address))
            time.sleep(0.05)
        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline and len(ep._partials) > 1:
            time.sleep(0.02)
        assert ep._partial_bytes <= 30_000
        raw.close()


def test_fuzz_garbage_packets_no_crash():
    rng = random.Random(17)
    with Endpoint(EndpointConfig(udp="loopback")) as ep:
        sub = ep.subscribe("a/*")
        raw = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for _ in range(500):
            data = rng.randbytes(rng.randint(0, 100))
            if rng.random() < 0.3:
                data = rng.choice([b"ARK1", b"ARKF"]) + data
            raw.sendto(data, tuple(ep.address))
        raw.close()
        time.sleep(0.2)
        ep.publish("a/ok", 1, b"still alive")
        env = sub.recv(timeout=1.0)
        assert env is not None and env.payload == b"still alive"


def test_config_validation():
    with pytest.raises(ValueError):
        EndpointConfig(udp="loopback", max_datagram=100)
    with pytest.raises(ValueError):
        EndpointConfig(udp="loopback", queue_capacity=0)
