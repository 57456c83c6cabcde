from __future__ import annotations

import io
import json
import math
import threading
import time

import pytest

from robomesh import standard
from robomesh.registry import RegistryClient
from robomesh.sim2d import LidarSpec, RobotSpec, Sim2dNode, WorldModel
from robomesh.tools import (
    ChannelStats,
    build_graph,
    graph_to_dot,
    render_graph,
    run_spy,
    run_tap,
)


def test_empty_network_graph(registry_server, node_factory):
    c = RegistryClient(registry_server.address)
    doc = build_graph(c.snapshot())
    assert doc["nodes"] == [] and doc["publishes"] == []
    dot = graph_to_dot(doc)
    assert dot.startswith("digraph robomesh {")


def test_graph_contains_pub_sub_edges(registry_server, node_factory):
    sim = node_factory("sim")
    slam = node_factory("slam")
    sim.create_publisher("scan", standard.laser_scan_t)
    slam.create_subscriber("sim/scan", standard.laser_scan_t)
    c = RegistryClient(registry_server.address)
    doc = build_graph(c.snapshot())
    assert ("sim", "sim/scan") in [tuple(p) for p in doc["publishes"]]
    assert ("sim/scan", "slam") in [tuple(s) for s in doc["subscribes"]]
    dot = render_graph(c, "dot")
    assert '"node:sim" -> "chan:sim/scan"' in dot
    assert '"chan:sim/scan" -> "node:slam"' in dot


def test_graph_deterministic(registry_server, node_factory):
    a = node_factory("alpha")
    b = node_factory("beta")
    a.create_publisher("x", standard.twist_2d_t)
    b.create_publisher("y", standard.twist_2d_t)
    b.advertise_service("reset", standard.reset_request_t, standard.reset_reply_t, lambda r: r)
    c = RegistryClient(registry_server.address)
    assert render_graph(c, "dot") == render_graph(c, "dot")
    doc = json.loads(render_graph(c, "json"))
    assert doc["services"] == ["beta/reset"]


def test_spy_stats_periodic_stream_zero_jitter():
    stats = ChannelStats(window_s=10.0)
    for i in range(100):
        stats.add("a/x", 1_000_000 + i * 10_000, 42)  # exactly 100 Hz
    rows = stats.rows()
    assert len(rows) == 1
    row = rows[0]
    assert row.count == 100
    assert row.jitter_ms == pytest.approx(0.0, abs=1e-9)
    assert row.fingerprint == 42
    assert row.rate_hz == pytest.approx(10.0)  # 100 msgs over a 10 s window


def test_spy_silent_channel_zero():
    stats = ChannelStats()
    rows = stats.rows()
    assert rows == []


def test_spy_live_rate_measurement(node_factory):
    src = node_factory("src")
    spy_node = node_factory("spy")
    pub = src.create_publisher("x", standard.twist_2d_t)
    stop = threading.Event()

    def blast():
        # 100 Hz publisher; sleep+spin pacing keeps publish-side jitter low
        # even when the test machine is busy
        next_t = time.monotonic()
        while not stop.is_set():
            pub.publish({"v": 0.0, "w": 0.0})
            next_t += 0.01
            while True:
                delay = next_t - time.monotonic()
                if delay <= 0:
                    break
                if delay > 0.002:
                    time.sleep(delay - 0.002)

    thread = threading.Thread(target=blast, daemon=True)
    thread.start()
    try:
        out = io.StringIO()
        stats = run_spy(spy_node, "src/*", window_s=1.0, duration_s=1.5,
                        as_json=True, out=out)
        rows = stats.rows(time.time_ns() // 1000)
        row = next(r for r in rows if r.channel == "src/x")
        assert 98.0 <= row.rate_hz <= 102.0
        assert row.jitter_ms < 2.0
        assert out.getvalue().strip()  # json lines emitted
    finally:
        stop.set()


def test_tap_json_lines(node_factory):
    src = node_factory("src")
    tap_node = node_factory("tap")
    pub = src.create_publisher("pose", standard.pose_2d_t)

    out = io.StringIO()
    done = []

    def tapper():
        done.append(run_tap(tap_node, "src/pose", "pose_2d_t",
                            duration_s=2.0, out=out, max_messages=3))

    thread = threading.Thread(target=tapper)
    thread.start()
    time.sleep(0.2)
    for i in range(3):
        pub.publish({"x": float(i), "y": 0.0, "theta": 0.5})
        time.sleep(0.05)
    thread.join()
    assert done == [3]
    lines = [json.loads(l) for l in out.getvalue().splitlines()]
    assert [l["value"]["x"] for l in lines] == [0.0, 1.0, 2.0]
    assert all(l["value"]["theta"] == 0.5 for l in lines)


def test_tap_fingerprint_mismatch_warns_no_crash(node_factory):
    src = node_factory("src")
    tap_node = node_factory("tap")
    pub = src.create_publisher("pose", standard.twist_2d_t)  # wrong type on purpose

    out, err = io.StringIO(), io.StringIO()
    done = []

    def tapper():
        done.append(run_tap(tap_node, "src/pose", "pose_2d_t",
                            duration_s=1.0, out=out, err=err))

    thread = threading.Thread(target=tapper)
    thread.start()
    time.sleep(0.2)
    pub.publish({"v": 0.0, "w": 0.0})
    thread.join()
    assert done == [0]
    assert "fingerprint" in err.getvalue()


def test_tap_unknown_schema_or_field_errors(node_factory):
    tap_node = node_factory("tap")
    with pytest.raises(ValueError, match="unknown schema"):
        run_tap(tap_node, "a/b", "mystery_t", duration_s=0.1)
    with pytest.raises(ValueError, match="not a numeric field"):
        run_tap(tap_node, "a/b", "pose_2d_t", csv_field="frame", duration_s=0.1)


def test_tap_csv_field(node_factory):
    src = node_factory("src")
    tap_node = node_factory("tap")
    pub = src.create_publisher("pose", standard.pose_2d_t)
    out = io.StringIO()
    done = []

    def tapper():
        done.append(run_tap(tap_node, "src/pose", "pose_2d_t", duration_s=2.0,
                            csv_field="theta", out=out, max_messages=4))

    thread = threading.Thread(target=tapper)
    thread.start()
    time.sleep(0.2)
    for i in range(4):
        pub.publish({"x": 0.0, "y": 0.0, "theta": i * 0.5})
    thread.join()
    lines = out.getvalue().splitlines()
    assert lines[0] == "t_us,value"
    vals = [float(l.split(",")[1]) for l in lines[1:]]
    assert vals == [0.0, 0.5, 1.0, 1.5]


def test_tools_are_read_only(node_factory):
    """Sim scan payload streams are identical with and without observers."""

    def run_sim(with_tools: bool):
        name = "probe" if with_tools else "plain"
        sim_node = node_factory(f"sim_{name}")
        world = WorldModel(
            width=5.0, height=5.0, resolution=0.1,
            rectangles=[{"x": 2.0, "y": 2.0, "w": 1.0, "h": 1.0}],
            robot=RobotSpec(pose=(1.0, 1.0, 0.3)),
            lidar=LidarSpec(n=15, fov=math.pi, range_max=4.0, noise_std=0.02),
            seed=5,
        )
        simnode = Sim2dNode(sim_node, world, rate_hz=100.0, scan_rate_hz=50.0,
                            cmd_channels=("nobody/wheel_cmd",), twist_channels=())
        watcher = node_factory(f"watch_{name}")
        raw = watcher.create_raw_subscriber(f"sim_{name}/scan", 512)
        observers = []
        if with_tools:
            spy_node = node_factory("spy")
            observers.append(spy_node.create_raw_subscriber("*", 512))
        sim_node.spin(100.0, on_step=simnode.step, max_steps=40)
        time.sleep(0.3)
        return [env.payload for env in raw.drain()]

    plain = run_sim(False)
    probed = run_sim(True)
    assert len(plain) == len(probed) == 20
    assert plain == probed
