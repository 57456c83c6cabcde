from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

import robomesh.registry as reg
from robomesh.registry import RegistryClient, RegistryServer, RegistryError


@pytest.fixture()
def server():
    with RegistryServer(port=0) as srv:
        yield srv


def client_for(server) -> RegistryClient:
    return RegistryClient(server.address)


def test_fresh_registry_empty(server):
    c = client_for(server)
    assert c.list_nodes() == []
    snap = c.snapshot()
    assert snap["v"] == 1 and snap["nodes"] == []


def test_register_and_query(server):
    c = client_for(server)
    c.register(
        {
            "name": "sim",
            "address": ["127.0.0.1", 5555],
            "publishers": [["sim/scan", 12345]],
            "subscribers": ["nav/wheel_cmd"],
            "services": [
                {"name": "reset", "req_fingerprint": 1, "rep_fingerprint": 2}
            ],
        }
    )
    assert c.list_nodes() == ["sim"]
    snap = c.snapshot()
    node = snap["nodes"][0]
    assert node["publishers"] == [["sim/scan", 12345]]
    assert node["subscribers"] == ["nav/wheel_cmd"]


def test_duplicate_name_rejected(server):
    c = client_for(server)
    c.register({"name": "sim", "address": []})
    c2 = client_for(server)
    with pytest.raises(RegistryError, match="already live"):
        c2.register({"name": "sim", "address": []})


def test_update_replaces_lists_atomically(server):
    c = client_for(server)
    c.register({"name": "sim", "address": []})
    c.update("sim", publishers=[["sim/pose", 7]])
    snap = c.snapshot()
    assert snap["nodes"][0]["publishers"] == [["sim/pose", 7]]


def test_heartbeat_unknown_name_warns(server):
    c = client_for(server)
    reply = c.heartbeat("ghost")
    assert reply.get("warning")


def test_expiry_after_missed_heartbeats(server, monkeypatch):
    monkeypatch.setattr(reg, "HEARTBEAT_PERIOD", 0.1)
    c = client_for(server)
    c.register({"name": "sim", "address": []})
    assert c.list_nodes() == ["sim"]
    time.sleep(0.5)  # > 3 * 0.1 s
    assert c.list_nodes() == []
    # re-register after expiry is accepted
    c.register({"name": "sim", "address": []})
    assert c.list_nodes() == ["sim"]


def test_lookup_service(server):
    c = client_for(server)
    c.register(
        {
            "name": "echo",
            "address": ["127.0.0.1", 9],
            "services": [{"name": "echo", "req_fingerprint": 11, "rep_fingerprint": 22}],
        }
    )
    hit = c.lookup_service("echo/echo")
    assert hit["service"]["req_fingerprint"] == 11
    assert hit["service"]["rep_fingerprint"] == 22
    assert hit["address"] == ["127.0.0.1", 9]
    with pytest.raises(KeyError):
        c.lookup_service("echo/nope")
    with pytest.raises(KeyError):
        c.lookup_service("ghost/echo")


def test_default_services_carry_marker(server):
    c = client_for(server)
    services = c.list_services()
    for name in ("list_nodes", "list_services", "lookup_service", "deregister"):
        assert f"__registry/__DEFAULT_SERVICE/{name}" in services


def test_snapshot_schema_golden(server):
    c = client_for(server)
    c.register(
        {
            "name": "sim",
            "address": ["127.0.0.1", 40000],
            "publishers": [["sim/scan", 3], ["sim/pose", 4]],
            "subscribers": ["teleop/twist"],
            "services": [{"name": "reset", "req_fingerprint": 5, "rep_fingerprint": 6}],
        }
    )
    snap = c.snapshot()
    # normalize volatile fields, then compare against the frozen document
    snap["stamp_us"] = 0
    for node in snap["nodes"]:
        node["last_heartbeat_us"] = 0
    golden = json.loads(
        (Path(__file__).parent / "fixtures" / "registry_snapshot.json").read_text()
    )
    assert snap == golden


def test_restart_amnesia_and_client_retry(server):
    c = client_for(server)
    c.register({"name": "sim", "address": [], "publishers": [["sim/scan", 1]]})
    host, port = server.address
    server.close()
    with RegistryServer(host, port) as srv2:
        assert srv2.address[1] == port
        # client reconnects, replays its registration, then updates
        c.update("sim", publishers=[["sim/scan", 1], ["sim/pose", 2]])
        snap = c.snapshot()
        names = [n["name"] for n in snap["nodes"]]
        assert names == ["sim"]
        assert snap["nodes"][0]["publishers"] == [["sim/scan", 1], ["sim/pose", 2]]


def test_unreachable_registry_raises_fast():
    c = RegistryClient(("127.0.0.1", 1), connect_timeout=0.3)
    t0 = time.monotonic()
    with pytest.raises(RegistryError):
        c.call({"op": "list_nodes"}, retries=0)
    assert time.monotonic() - t0 < 2.0


def test_malformed_request_gets_error_reply(server):
    import socket

    s = socket.create_connection(server.address)
    s.sendall(b"this is not json\n")
    line = s.makefile().readline()
    reply = json.loads(line)
    assert reply["ok"] is False
    s.close()
