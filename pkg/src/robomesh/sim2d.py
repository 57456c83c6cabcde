"""Deterministic 2D differential-drive simulator with a raycast lidar.

World geometry comes from YAML: rectangular obstacles rasterized onto a
boolean occupancy grid. Dynamics integrate the unicycle exactly along arcs;
a step whose swept robot disk would intersect an occupied cell is cancelled
(collided=true, pose frozen). The lidar casts N beams through the grid
(Amanatides-Woo traversal, vectorized across beams) and adds seeded Gaussian
range noise.

The same class doubles as the stub-hardware endpoint: `stub=True` adds one
step of command latency and offsets the noise seed, standing in for real
hardware behind identical channels.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import standard
from .geom import arc_step, wrap_angle


def forward_kinematics(left: float, right: float, wheel_radius: float, axle_track: float):
    """Wheel speeds (rad/s) -> body twist (v m/s, w rad/s)."""
    v = wheel_radius * (left + right) / 2.0
    w = wheel_radius * (right - left) / axle_track
    return v, w


def inverse_kinematics(v: float, w: float, wheel_radius: float, axle_track: float):
    """Body twist -> wheel speeds (left, right) in rad/s."""
    if wheel_radius == 0:
        raise ValueError("wheel_radius must be nonzero")
    left = (v - w * axle_track / 2.0) / wheel_radius
    right = (v + w * axle_track / 2.0) / wheel_radius
    return left, right


@dataclass
class RobotSpec:
    pose: tuple[float, float, float] = (1.0, 1.0, 0.0)
    wheel_radius: float = 0.1
    axle_track: float = 0.4
    half_width: float = 0.25


@dataclass
class LidarSpec:
    n: int = 120
    fov: float = 2.0 * math.pi * 0.75
    range_max: float = 5.0
    noise_std: float = 0.0


@dataclass
class WorldModel:
    width: float
    height: float
    resolution: float
    rectangles: list = field(default_factory=list)  # dicts {x, y, w, h}
    robot: RobotSpec = field(default_factory=RobotSpec)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    dt: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.resolution <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("bounds and resolution must be positive")
        if self.robot.wheel_radius <= 0 or self.robot.axle_track <= 0:
            raise ValueError("wheel_radius and axle_track must be positive")
        if self.lidar.n < 2:
            raise ValueError("lidar needs at least 2 beams")
        if not 0 < self.lidar.fov <= 2 * math.pi + 1e-12:
            raise ValueError("fov must be in (0, 2*pi]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.nx = int(math.ceil(self.width / self.resolution))
        self.ny = int(math.ceil(self.height / self.resolution))
        self.grid = np.zeros((self.ny, self.nx), dtype=bool)
        for r in self.rectangles:
            self._rasterize(r["x"], r["y"], r["w"], r["h"])

    def _rasterize(self, x, y, w, h) -> None:
        # a cell is occupied when its center lies inside the rectangle
        res = self.resolution
        ix0 = max(0, math.ceil(x / res - 0.5))
        ix1 = min(self.nx, math.ceil((x + w) / res - 0.5))
        iy0 = max(0, math.ceil(y / res - 0.5))
        iy1 = min(self.ny, math.ceil((y + h) / res - 0.5))
        self.grid[iy0:iy1, ix0:ix1] = True

    @classmethod
    def from_dict(cls, cfg: dict) -> "WorldModel":
        robot = cfg.get("robot", {})
        lidar = cfg.get("lidar", {})
        return cls(
            width=float(cfg["bounds"][0]),
            height=float(cfg["bounds"][1]),
            resolution=float(cfg.get("resolution", 0.1)),
            rectangles=list(cfg.get("rectangles", [])),
            robot=RobotSpec(
                pose=tuple(robot.get("pose", (1.0, 1.0, 0.0))),
                wheel_radius=float(robot.get("wheel_radius", 0.1)),
                axle_track=float(robot.get("axle_track", 0.4)),
                half_width=float(robot.get("half_width", 0.25)),
            ),
            lidar=LidarSpec(
                n=int(lidar.get("n", 120)),
                fov=float(lidar.get("fov", 2.0 * math.pi * 0.75)),
                range_max=float(lidar.get("range_max", 5.0)),
                noise_std=float(lidar.get("noise_std", 0.0)),
            ),
            dt=float(cfg.get("dt", 0.02)),
            seed=int(cfg.get("seed", 0)),
        )

    @classmethod
    def from_yaml(cls, path) -> "WorldModel":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def raycast(grid: np.ndarray, resolution: float, x: float, y: float,
            angles: np.ndarray, range_max: float) -> np.ndarray:
    """First-hit distances for beams from (x, y); range_max when nothing hit.

    Amanatides-Woo grid traversal run in lockstep across all beams.
    """
    n = len(angles)
    dx = np.cos(angles)
    dy = np.sin(angles)
    ny, nx = grid.shape

    ix = np.full(n, int(math.floor(x / resolution)))
    iy = np.full(n, int(math.floor(y / resolution)))
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tdelta_x = np.where(dx != 0, resolution / np.abs(dx), np.inf)
        tdelta_y = np.where(dy != 0, resolution / np.abs(dy), np.inf)
        next_x = np.where(dx > 0, (ix + 1) * resolution, ix * resolution)
        next_y = np.where(dy > 0, (iy + 1) * resolution, iy * resolution)
        tmax_x = np.where(dx != 0, (next_x - x) / dx, np.inf)
        tmax_y = np.where(dy != 0, (next_y - y) / dy, np.inf)

    ranges = np.full(n, float(range_max))
    t = np.zeros(n)
    active = np.ones(n, dtype=bool)

    # starting inside an obstacle reads as an immediate hit
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    hit0 = np.zeros(n, dtype=bool)
    hit0[inside] = grid[iy[inside], ix[inside]]
    ranges[hit0] = 0.0
    active &= ~hit0

    while active.any():
        use_x = active & (tmax_x < tmax_y)
        use_y = active & ~use_x
        t = np.where(use_x, tmax_x, np.where(use_y, tmax_y, t))
        ix = np.where(use_x, ix + step_x, ix)
        iy = np.where(use_y, iy + step_y, iy)
        tmax_x = np.where(use_x, tmax_x + tdelta_x, tmax_x)
        tmax_y = np.where(use_y, tmax_y + tdelta_y, tmax_y)

        beyond = active & (t > range_max)
        active &= ~beyond

        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        outside = active & ~inside
        # once out of the grid a beam can never hit again
        active &= ~outside

        check = np.where(active)[0]
        if len(check):
            hits = check[grid[iy[check], ix[check]]]
            ranges[hits] = t[hits]
            active[hits] = False
    return ranges


@dataclass
class RobotState:
    x: float
    y: float
    theta: float
    left: float = 0.0  # commanded wheel speeds, rad/s
    right: float = 0.0
    collided: bool = False
    wheel_pos: tuple[float, float] = (0.0, 0.0)


class Simulator:
    """Headless deterministic core; the node and the offline scenario runner
    both drive this object."""

    def __init__(self, world: WorldModel, stub: bool = False):
        self.world = world
        self.stub = stub
        seed = world.seed + (1000 if stub else 0)
        self.rng = np.random.default_rng(seed)
        x, y, theta = world.robot.pose
        if self._disk_collides(x, y):
            raise ValueError("robot initial pose is not in free space")
        self.state = RobotState(x, y, wrap_angle(theta))
        self.episode = 0
        self.sim_time = 0.0
        self._pending_cmd: tuple[float, float] | None = None  # stub latency buffer
        # robot-frame beam angles: fov spread centered on heading
        n = world.lidar.n
        self.beam_angles = world.lidar.fov * (np.arange(n) / (n - 1) - 0.5)

    # -- collision --

    def _disk_collides(self, x: float, y: float) -> bool:
        res = self.world.resolution
        r = self.world.robot.half_width
        ix0 = max(0, int(math.floor((x - r) / res)))
        ix1 = min(self.world.nx - 1, int(math.floor((x + r) / res)))
        iy0 = max(0, int(math.floor((y - r) / res)))
        iy1 = min(self.world.ny - 1, int(math.floor((y + r) / res)))
        for iy in range(iy0, iy1 + 1):
            for ix in range(ix0, ix1 + 1):
                if not self.world.grid[iy, ix]:
                    continue
                # closest point of the cell rectangle to the disk center
                cx = min(max(x, ix * res), (ix + 1) * res)
                cy = min(max(y, iy * res), (iy + 1) * res)
                if (cx - x) ** 2 + (cy - y) ** 2 < r * r:
                    return True
        return False

    def _sweep_collides(self, v: float, w: float, dt: float) -> bool:
        dist = abs(v) * dt
        steps = max(1, int(math.ceil(dist / (self.world.resolution / 2.0))))
        s = self.state
        for k in range(1, steps + 1):
            px, py, _ = arc_step(s.x, s.y, s.theta, v, w, dt * k / steps)
            if self._disk_collides(px, py):
                return True
        return False

    # -- commands --

    def set_wheel_command(self, left: float, right: float) -> None:
        if self.stub:
            self._pending_cmd = (left, right)
        else:
            self.state.left, self.state.right = left, right

    def set_twist_command(self, v: float, w: float) -> None:
        left, right = inverse_kinematics(
            v, w, self.world.robot.wheel_radius, self.world.robot.axle_track
        )
        self.set_wheel_command(left, right)

    # -- stepping --

    def step(self, dt: float | None = None) -> RobotState:
        dt = self.world.dt if dt is None else dt
        if dt <= 0:
            raise ValueError("dt must be positive")
        s = self.state
        if self.stub and self._pending_cmd is not None:
            pending = self._pending_cmd
            self._pending_cmd = None
            applied = (s.left, s.right)  # old command drives this step
            s.left, s.right = pending
            left, right = applied
        else:
            left, right = s.left, s.right
        v, w = forward_kinematics(
            left, right, self.world.robot.wheel_radius, self.world.robot.axle_track
        )
        if self._sweep_collides(v, w, dt):
            s.collided = True
        else:
            s.collided = False
            s.x, s.y, s.theta = arc_step(s.x, s.y, s.theta, v, w, dt)
            s.theta = wrap_angle(s.theta)
        s.wheel_pos = (s.wheel_pos[0] + left * dt, s.wheel_pos[1] + right * dt)
        self.sim_time += dt
        return s

    # -- sensing --

    def scan(self) -> dict:
        world_angles = self.state.theta + self.beam_angles
        ranges = raycast(
            self.world.grid, self.world.resolution, self.state.x, self.state.y,
            world_angles, self.world.lidar.range_max,
        )
        noise = self.rng.normal(0.0, 1.0, len(ranges)) * self.world.lidar.noise_std
        ranges = np.clip(ranges + noise, 0.0, self.world.lidar.range_max)
        stamp_us = int(round(self.sim_time * 1e6))
        value = {
            "header": standard.make_header(stamp_us, "lidar"),
            "angles": [float(a) for a in self.beam_angles],
            "ranges": [float(r) for r in ranges],
            "range_max": float(self.world.lidar.range_max),
        }
        standard.validate("laser_scan_t", value)
        return value

    def pose_msg(self) -> dict:
        s = self.state
        return {"x": s.x, "y": s.y, "theta": s.theta}

    def joint_state_msg(self) -> dict:
        s = self.state
        return {
            "names": ["left_wheel", "right_wheel"],
            "positions": [s.wheel_pos[0], s.wheel_pos[1]],
            "velocities": [s.left, s.right],
            "efforts": [],
        }

    # -- reset --

    def reset(self, pose: tuple[float, float, float] | None = None) -> int:
        target = tuple(pose) if pose is not None else tuple(self.world.robot.pose)
        if self._disk_collides(target[0], target[1]):
            raise ValueError(f"reset pose {target} is in collision")
        self.state = RobotState(
            target[0], target[1], wrap_angle(target[2]), wheel_pos=self.state.wheel_pos
        )
        self._pending_cmd = None
        self.episode += 1
        return self.episode


class Sim2dNode:
    """Network wrapper: publishes pose/scan/joint_state, consumes wheel and
    twist commands (last writer wins), serves the reset service."""

    def __init__(self, node, world: WorldModel, stub: bool = False,
                 rate_hz: float = 50.0, scan_rate_hz: float = 10.0,
                 cmd_channels=("nav/wheel_cmd",), twist_channels=("teleop/twist",)):
        self.node = node
        self.sim = Simulator(world, stub=stub)
        self.rate_hz = rate_hz
        self.scan_every = max(1, int(round(rate_hz / scan_rate_hz)))
        self._lock = threading.Lock()
        self._step_count = 0

        self.pub_pose = node.create_publisher("pose", standard.pose_2d_t)
        self.pub_scan = node.create_publisher("scan", standard.laser_scan_t)
        self.pub_joints = node.create_publisher("joint_state", standard.joint_state_t)
        self.pub_episode = node.create_publisher("episode", standard.episode_marker_t)
        for ch in cmd_channels:
            node.create_subscriber(ch, standard.wheel_cmd_t, callback=self._on_wheel)
        for ch in twist_channels:
            node.create_subscriber(ch, standard.twist_2d_t, callback=self._on_twist)
        node.advertise_service(
            "reset", standard.reset_request_t, standard.reset_reply_t, self._on_reset
        )

    def _on_wheel(self, value) -> None:
        with self._lock:
            self.sim.set_wheel_command(value["left"], value["right"])

    def _on_twist(self, value) -> None:
        with self._lock:
            self.sim.set_twist_command(value["v"], value["w"])

    def _on_reset(self, req) -> dict:
        with self._lock:
            pose = None
            if req.get("has_pose"):
                p = req["pose"]
                pose = (p["x"], p["y"], p["theta"])
            try:
                episode = self.sim.reset(pose)
            except ValueError as e:
                return {"ok": False, "episode": self.sim.episode, "message": str(e)}
            # zero any queued motion so the next published twist is zero
            self.sim.state.left = self.sim.state.right = 0.0
        self.pub_episode.publish({"episode": episode,
                                  "stamp_us": int(self.sim.sim_time * 1e6)})
        return {"ok": True, "episode": episode, "message": ""}

    def step(self, dt: float) -> None:
        with self._lock:
            self.sim.step(self.sim.world.dt)
            self._step_count += 1
            publish_scan = self._step_count % self.scan_every == 0
            pose = self.sim.pose_msg()
            joints = self.sim.joint_state_msg()
            scan = self.sim.scan() if publish_scan else None
        self.pub_pose.publish(pose)
        self.pub_joints.publish(joints)
        if scan is not None:
            self.pub_scan.publish(scan)

    def run(self) -> None:
        self.node.spin(self.rate_hz, on_step=self.step)
