"""Grid navigation: clearance-aware A* planning and a rotate-then-drive PD
waypoint controller.

The planner binarizes a probability grid at a threshold (ties occupied),
computes the exact Euclidean distance transform (two-pass squared EDT), and
searches the 8-connected grid where a cell is traversable iff it is free and
its obstacle distance is at least ``half_width + margin``.  Diagonal moves
additionally require both adjacent orthogonal cells traversable: a disk
robot cannot cut corners.  Step costs are resolution and sqrt(2)*resolution;
the octile heuristic keeps the search admissible and consistent, and equal-f
ties break toward larger g.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import standard
from .geom import wrap_angle
from .sim2d import inverse_kinematics

_BIG = 1e12
SQRT2 = math.sqrt(2.0)


class PlanningError(ValueError):
    pass


@dataclass
class Grid2D:
    occupied: np.ndarray  # bool [ny, nx]
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    @property
    def shape(self):
        return self.occupied.shape

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin_x) / self.resolution)),
            int(math.floor((y - self.origin_y) / self.resolution)),
        )

    def center_of(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        ny, nx = self.occupied.shape
        return 0 <= ix < nx and 0 <= iy < ny


def binarize(grid_msg: dict, threshold: float = 0.5) -> Grid2D:
    """occupancy_grid_t -> boolean grid; occupied iff probability >= threshold
    (cells exactly at the unknown value 0.5 come out occupied: conservative)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    w, h = grid_msg["width"], grid_msg["height"]
    cells = np.asarray(grid_msg["cells"], dtype=np.float64).reshape(h, w)
    return Grid2D(
        occupied=cells >= threshold,
        resolution=grid_msg["resolution"],
        origin_x=grid_msg["origin"]["x"],
        origin_y=grid_msg["origin"]["y"],
    )


def _dt_1d(f: np.ndarray) -> np.ndarray:
    """Felzenszwalb-Huttenlocher lower envelope: d(p) = min_q (p-q)^2 + f(q)."""
    n = len(f)
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0] = -math.inf
    z[1] = math.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def distance_transform(occupied: np.ndarray, resolution: float) -> np.ndarray:
    """Exact Euclidean distance (meters) to the nearest occupied cell.

    Distances are measured between cell centers; occupied cells read 0.
    A grid with no occupied cell is +inf everywhere.
    """
    occupied = np.asarray(occupied, dtype=bool)
    if occupied.size == 0:
        raise ValueError("empty grid")
    if not occupied.any():
        return np.full(occupied.shape, math.inf)
    f = np.where(occupied, 0.0, _BIG)
    for ix in range(f.shape[1]):  # along columns
        f[:, ix] = _dt_1d(f[:, ix])
    for iy in range(f.shape[0]):  # then rows
        f[iy, :] = _dt_1d(f[iy, :])
    return np.sqrt(f) * resolution


@dataclass
class PlanPath:
    waypoints: list[tuple[float, float]]
    cost: float

    def __len__(self) -> int:
        return len(self.waypoints)

    def to_msg(self, stamp_us: int = 0) -> dict:
        return {
            "header": standard.make_header(stamp_us, "map"),
            "xs": [p[0] for p in self.waypoints],
            "ys": [p[1] for p in self.waypoints],
        }


_MOVES = [
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2),
]


def octile(ax: int, ay: int, bx: int, by: int) -> float:
    dx, dy = abs(ax - bx), abs(ay - by)
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def plan(
    grid: Grid2D,
    start: tuple[float, float],
    goal: tuple[float, float],
    robot_half_width: float,
    margin: float,
    distance_field: np.ndarray | None = None,
) -> PlanPath | None:
    """A* from start to goal (world coordinates); None when no path exists.

    Clearance: every traversable cell keeps ``half_width + margin`` of
    obstacle distance, so returned waypoints inherit the bound.
    """
    ny, nx = grid.shape
    sx, sy = grid.cell_of(*start)
    gx, gy = grid.cell_of(*goal)
    if not grid.in_bounds(sx, sy):
        raise PlanningError(f"start {start} outside grid")
    if not grid.in_bounds(gx, gy):
        raise PlanningError(f"goal {goal} outside grid")
    if distance_field is None:
        distance_field = distance_transform(grid.occupied, grid.resolution)
    clearance = robot_half_width + margin
    traversable = (~grid.occupied) & (distance_field >= clearance)
    if not traversable[sy, sx]:
        raise PlanningError(f"start {start} is not traversable (occupied or too close)")
    if not traversable[gy, gx]:
        raise PlanningError(f"goal {goal} is not traversable (occupied or too close)")

    res = grid.resolution
    start_cell = (sx, sy)
    goal_cell = (gx, gy)
    g_score = {start_cell: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    open_heap = [(octile(sx, sy, gx, gy) * res, 0.0, counter, start_cell)]
    closed = set()

    while open_heap:
        f, neg_g, _, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal_cell:
            waypoints = [grid.center_of(*cell)]
            while cell in parent:
                cell = parent[cell]
                waypoints.append(grid.center_of(*cell))
            waypoints.reverse()
            return PlanPath(waypoints, g_score[goal_cell])
        cx, cy = cell
        base_g = g_score[cell]
        for dx, dy, step in _MOVES:
            nx_, ny_ = cx + dx, cy + dy
            if not (0 <= nx_ < nx and 0 <= ny_ < ny):
                continue
            if not traversable[ny_, nx_]:
                continue
            if dx and dy:  # no corner cutting for diagonal moves
                if not (traversable[cy, nx_] and traversable[ny_, cx]):
                    continue
            tentative = base_g + step * res
            neighbor = (nx_, ny_)
            if tentative < g_score.get(neighbor, math.inf) - 1e-12:
                g_score[neighbor] = tentative
                parent[neighbor] = cell
                counter += 1
                fval = tentative + octile(nx_, ny_, gx, gy) * res
                # tie-break equal f toward larger g
                heapq.heappush(open_heap, (fval, -tentative, counter, neighbor))
    return None


def downsample(path: PlanPath, spacing: float) -> PlanPath:
    """Keep the first waypoint, then every waypoint at least ``spacing`` of
    arc length past the last kept one; always keep the final waypoint."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = path.waypoints
    if len(pts) <= 2:
        return PlanPath(list(pts), path.cost)
    kept = [pts[0]]
    acc = 0.0
    for prev, cur in zip(pts[:-1], pts[1:]):
        acc += math.hypot(cur[0] - prev[0], cur[1] - prev[1])
        if acc >= spacing:
            kept.append(cur)
            acc = 0.0
    if kept[-1] != pts[-1]:
        kept.append(pts[-1])
    return PlanPath(kept, path.cost)


@dataclass
class ControllerGains:
    kp_ang: float = 2.0
    kd_ang: float = 0.1
    kp_lin: float = 0.8
    theta_tol: float = 0.1  # rad
    pos_tol: float = 0.1  # m
    v_max: float = 0.5  # m/s
    w_max: float = 1.5  # rad/s
    final_pos_tol: float | None = None  # tighter tolerance at the last waypoint


@dataclass
class ControllerState:
    gains: ControllerGains = field(default_factory=ControllerGains)
    phase: str = "ROTATE"
    index: int = 0
    prev_err: float | None = None
    done: bool = False

    def reset(self) -> None:
        self.phase = "ROTATE"
        self.index = 0
        self.prev_err = None
        self.done = False


def pd_step(ctrl: ControllerState, pose: dict, path: PlanPath, dt: float) -> dict:
    """One control step toward the current waypoint; returns a twist_2d_t.

    Rotate in place until the heading error is inside theta_tol, then drive;
    advancing to the next waypoint re-enters ROTATE with zero output for
    that step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not path.waypoints:
        raise ValueError("empty path")
    k = ctrl.gains
    if ctrl.index >= len(path.waypoints):
        ctrl.done = True
        return {"v": 0.0, "w": 0.0}
    wx, wy = path.waypoints[ctrl.index]
    x, y, theta = pose["x"], pose["y"], pose["theta"]
    dist = math.hypot(wx - x, wy - y)
    tol = k.pos_tol
    if k.final_pos_tol is not None and ctrl.index == len(path.waypoints) - 1:
        tol = k.final_pos_tol
    if dist < tol:
        ctrl.index += 1
        ctrl.phase = "ROTATE"
        ctrl.prev_err = None
        if ctrl.index >= len(path.waypoints):
            ctrl.done = True
        return {"v": 0.0, "w": 0.0}

    err = wrap_angle(math.atan2(wy - y, wx - x) - theta)
    if ctrl.phase == "ROTATE" and abs(err) < k.theta_tol:
        ctrl.phase = "DRIVE"
    if ctrl.phase == "ROTATE":
        rate = 0.0 if ctrl.prev_err is None else (err - ctrl.prev_err) / dt
        w = k.kp_ang * err + k.kd_ang * rate
        ctrl.prev_err = err
        return {"v": 0.0, "w": max(-k.w_max, min(k.w_max, w))}
    v = max(0.0, min(k.v_max, k.kp_lin * dist))
    w = max(-k.w_max, min(k.w_max, k.kp_ang * err))
    ctrl.prev_err = err
    return {"v": v, "w": w}


class NavNode:
    """Plans on goal receipt and runs the waypoint controller at a fixed rate.

    Subscribes ``slam/pose`` and ``slam/map``; serves ``set_goal``; publishes
    the planned path plus twist and wheel commands.
    """

    def __init__(self, node, gains: ControllerGains | None = None,
                 half_width: float = 0.25, margin: float = 0.2,
                 threshold: float = 0.5, downsample_spacing: float = 0.3,
                 wheel_radius: float = 0.1, axle_track: float = 0.4,
                 pose_channel: str = "slam/pose", map_channel: str = "slam/map",
                 rate_hz: float = 20.0):
        self.node = node
        self.gains = gains or ControllerGains()
        self.half_width = half_width
        self.margin = margin
        self.threshold = threshold
        self.downsample_spacing = downsample_spacing
        self.wheel_radius = wheel_radius
        self.axle_track = axle_track
        self.rate_hz = rate_hz
        # (path, controller) swapped together so a new goal preempts the old
        # plan atomically between control steps
        self._active: tuple[PlanPath, ControllerState] | None = None

        self.sub_pose = node.create_subscriber(pose_channel, standard.pose_2d_t)
        self.sub_map = node.create_subscriber(map_channel, standard.occupancy_grid_t, queue_capacity=2)
        self.pub_path = node.create_publisher("path", standard.path_2d_t)
        self.pub_twist = node.create_publisher("twist", standard.twist_2d_t)
        self.pub_wheels = node.create_publisher("wheel_cmd", standard.wheel_cmd_t)
        node.advertise_service(
            "set_goal", standard.pose_2d_t, standard.set_goal_reply_t, self._on_goal
        )

    def _on_goal(self, goal) -> dict:
        pose = self.sub_pose.latest()
        grid_msg = self.sub_map.latest()
        if pose is None:
            return {"ok": False, "waypoints": 0, "message": "no pose estimate yet"}
        if grid_msg is None:
            return {"ok": False, "waypoints": 0, "message": "no map yet"}
        try:
            planned = self.plan_to(grid_msg[0], pose[0], (goal["x"], goal["y"]))
        except PlanningError as e:
            return {"ok": False, "waypoints": 0, "message": str(e)}
        if planned is None:
            return {"ok": False, "waypoints": 0, "message": "no path to goal"}
        self._active = (planned, ControllerState(self.gains))
        self.pub_path.publish(planned.to_msg())
        return {"ok": True, "waypoints": len(planned), "message": ""}

    def plan_to(self, grid_msg: dict, pose: dict, goal_xy) -> PlanPath | None:
        grid = binarize(grid_msg, self.threshold)
        planned = plan(grid, (pose["x"], pose["y"]), goal_xy, self.half_width, self.margin)
        if planned is None:
            return None
        return downsample(planned, self.downsample_spacing)

    def step(self, dt: float) -> None:
        active = self._active
        if active is None:
            return
        path, ctrl = active
        if ctrl.done:
            return
        pose = self.sub_pose.latest()
        if pose is None:
            return
        twist = pd_step(ctrl, pose[0], path, dt)
        left, right = inverse_kinematics(
            twist["v"], twist["w"], self.wheel_radius, self.axle_track
        )
        self.pub_twist.publish(twist)
        self.pub_wheels.publish({"left": left, "right": right})

    def run(self) -> None:
        self.node.spin(self.rate_hz, on_step=self.step)
