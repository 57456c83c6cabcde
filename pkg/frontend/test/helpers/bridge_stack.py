"""Test stack for the dashboard integration test.

Runs (in one process) a registry, a simulated robot, a minimal goal
provider that answers nav/set_goal and publishes nav/path + slam/map, and
the websocket bridge. Prints JSON events on stdout:

    {"event": "ready", "port": <bridge port>}
    {"event": "teleop", "recv_ms": <monotonic ms>, "v": ..., "w": ...}

Exits when stdin closes.
"""

import json
import sys
import threading
import time

from robomesh import standard
from robomesh.bridge import BridgeNode
from robomesh.registry import RegistryServer
from robomesh.runtime import NodeHandle
from robomesh.sim2d import LidarSpec, RobotSpec, Sim2dNode, WorldModel
from robomesh.transport import EndpointConfig


def out(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main():
    registry = RegistryServer(port=0).start()
    addr = registry.address

    def node(name):
        return NodeHandle(name, addr, EndpointConfig(udp="loopback"))

    nodes = [node(n) for n in ("robot", "slam", "nav", "watch", "bridge")]
    robot, slam, nav, watch, bridge_node = nodes
    for a in nodes:
        for b in nodes:
            if a is not b:
                a._endpoint.add_peer(*b._endpoint.address)

    world = WorldModel(
        width=10.0, height=10.0, resolution=0.1,
        rectangles=[{"x": 0.0, "y": 0.0, "w": 10.0, "h": 0.2}],
        robot=RobotSpec(pose=(5.0, 5.0, 0.0), half_width=0.2),
        lidar=LidarSpec(n=9, fov=3.14, range_max=4.0),
    )
    simnode = Sim2dNode(robot, world, cmd_channels=("nav/wheel_cmd",), twist_channels=())
    threading.Thread(target=simnode.run, daemon=True).start()

    # static map publisher standing in for SLAM
    map_pub = slam.create_publisher("map", standard.occupancy_grid_t)
    grid = {
        "header": standard.make_header(0, "map"),
        "origin": {"x": 0.0, "y": 0.0, "theta": 0.0},
        "resolution": 0.1,
        "width": 100,
        "height": 100,
        "cells": [0.0] * (100 * 100),
    }

    def pump_map():
        while True:
            grid["header"] = standard.make_header(int(time.time() * 1e6), "map")
            map_pub.publish(grid)
            time.sleep(0.5)

    threading.Thread(target=pump_map, daemon=True).start()

    # goal provider: acks and publishes a two-point path
    path_pub = nav.create_publisher("path", standard.path_2d_t)

    def on_goal(goal):
        path_pub.publish({
            "header": standard.make_header(0, "map"),
            "xs": [5.0, goal["x"]],
            "ys": [5.0, goal["y"]],
        })
        return {"ok": True, "waypoints": 2, "message": ""}

    nav.advertise_service("set_goal", standard.pose_2d_t, standard.set_goal_reply_t, on_goal)

    # teleop latency probe
    def on_teleop(value):
        out({"event": "teleop", "recv_ms": time.monotonic() * 1e3,
             "v": value["v"], "w": value["w"]})

    watch.create_subscriber("__ui/teleop", standard.twist_2d_t, callback=on_teleop)
    threading.Thread(target=lambda: watch.spin(200.0), daemon=True).start()

    bridge = BridgeNode(bridge_node, http_port=0, poll_interval=0.02,
                        reset_service="robot/reset")
    threading.Thread(target=bridge.run, daemon=True).start()
    bridge.ready.wait(10.0)
    out({"event": "ready", "port": bridge.port})

    sys.stdin.read()  # run until the test closes stdin
    bridge.stop()
    for n in nodes:
        n.shutdown()
    registry.close()


if __name__ == "__main__":
    main()
