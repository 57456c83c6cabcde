"""Deterministic offline mapping and navigation pipeline.

Drives the simulator, the FastSLAM filter and the planner/controller in
lockstep without any network or wall-clock dependency, so a fixed seed
reproduces every number bit-for-bit. This is the engine behind
``robomesh demo mapping`` and the end-to-end acceptance runs; the same
component classes are used by the live nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import wrap_angle
from .nav import (
    ControllerGains,
    ControllerState,
    Grid2D,
    distance_transform,
    downsample,
    pd_step,
    plan,
)
from .sim2d import Simulator, WorldModel
from .slam import GridSpec, ParticleSet, SlamConfig
from .teleop import ScriptedSource


@dataclass
class MappingResult:
    world: WorldModel
    sim: Simulator
    filter: ParticleSet
    true_poses: list[tuple[float, float, float]]
    est_poses: list[tuple[float, float, float]]
    observation_counts: np.ndarray  # beams seen per cell, true-pose geometry
    final_position_error: float
    final_heading_error: float
    map_agreement: float
    observed_cells: int

    def summary(self) -> dict:
        return {
            "final_position_error_m": round(self.final_position_error, 4),
            "final_heading_error_deg": round(math.degrees(self.final_heading_error), 2),
            "map_agreement": round(self.map_agreement, 4),
            "observed_cells": int(self.observed_cells),
            "resamples": self.filter.resample_count,
            "scans": len(self.est_poses),
        }


def _observe_cells(counts: np.ndarray, grid: GridSpec, x, y, theta, scan) -> None:
    """Count beam observations per cell along the true-pose rays."""
    angles = np.asarray(scan["angles"]) + theta
    ranges = np.asarray(scan["ranges"])
    range_max = scan["range_max"]
    step = grid.resolution / 2.0
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    n = len(ranges)
    cnts = np.maximum((ranges / step).astype(np.int64), 0)
    total = int(cnts.sum())
    if total:
        beam_of = np.repeat(np.arange(n), cnts)
        offsets = np.concatenate([[0], np.cumsum(cnts)[:-1]])
        ts = (np.arange(total) - np.repeat(offsets, cnts)) * step
        sx = x + ts * cos_a[beam_of]
        sy = y + ts * sin_a[beam_of]
        ix = np.floor((sx - grid.origin_x) / grid.resolution).astype(np.int64)
        iy = np.floor((sy - grid.origin_y) / grid.resolution).astype(np.int64)
        ok = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
        combo = beam_of[ok] * (grid.nx * grid.ny) + iy[ok] * grid.nx + ix[ok]
        cells = np.unique(combo) % (grid.nx * grid.ny)
        np.add.at(counts.reshape(-1), cells, 1)
    hit = ranges < range_max
    ex = x + ranges[hit] * cos_a[hit]
    ey = y + ranges[hit] * sin_a[hit]
    ix = np.floor((ex - grid.origin_x) / grid.resolution).astype(np.int64)
    iy = np.floor((ey - grid.origin_y) / grid.resolution).astype(np.int64)
    ok = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
    np.add.at(counts.reshape(-1), iy[ok] * grid.nx + ix[ok], 1)


def map_agreement(filter: ParticleSet, world: WorldModel,
                  observation_counts: np.ndarray, min_beams: int = 3) -> tuple[float, int]:
    """Binarized best-map vs ground truth over well-observed cells."""
    best = filter.best_particle()
    probs = 1.0 / (1.0 + np.exp(-best.grid))
    estimated_occ = probs >= 0.5
    mask = observation_counts >= min_beams
    n = int(mask.sum())
    if n == 0:
        return 0.0, 0
    agree = (estimated_occ[mask] == world.grid[mask]).mean()
    return float(agree), n


def run_mapping(
    world: WorldModel,
    script: ScriptedSource,
    slam_config: SlamConfig | None = None,
    duration_s: float | None = None,
    scan_every: int = 5,
    particles: int = 50,
    seed: int | None = None,
) -> MappingResult:
    """Scripted teleop drive with FastSLAM in the loop."""
    sim = Simulator(world)
    if slam_config is None:
        slam_config = SlamConfig(
            grid=GridSpec(world.width, world.height, world.resolution),
            particles=particles,
            seed=world.seed if seed is None else seed,
        )
    filt = ParticleSet(slam_config, initial_pose=tuple(world.robot.pose))
    counts = np.zeros((slam_config.grid.ny, slam_config.grid.nx), dtype=np.int64)
    duration = script.duration if duration_s is None else duration_s
    steps = int(round(duration / world.dt))

    true_poses, est_poses = [], []
    last_scan_t = None
    for k in range(steps):
        t = k * world.dt
        cmd = script.command_at(t)
        sim.set_twist_command(cmd.v, cmd.w)
        sim.step()
        if (k + 1) % scan_every == 0:
            scan = sim.scan()
            now = sim.sim_time
            if last_scan_t is not None:
                filt.predict(cmd.v, cmd.w, now - last_scan_t)
            last_scan_t = now
            filt.weight(scan)
            filt.update_maps(scan)
            filt.resample_if_needed()
            s = sim.state
            _observe_cells(counts, slam_config.grid, s.x, s.y, s.theta, scan)
            true_poses.append((s.x, s.y, s.theta))
            est_poses.append(filt.best_pose())

    tx, ty, tth = true_poses[-1]
    ex, ey, eth = est_poses[-1]
    agreement, observed = map_agreement(filt, world, counts)
    return MappingResult(
        world=world,
        sim=sim,
        filter=filt,
        true_poses=true_poses,
        est_poses=est_poses,
        observation_counts=counts,
        final_position_error=math.hypot(ex - tx, ey - ty),
        final_heading_error=abs(wrap_angle(eth - tth)),
        map_agreement=agreement,
        observed_cells=observed,
    )


@dataclass
class NavigationResult:
    reached: bool
    final_goal_distance: float
    min_true_clearance: float
    true_poses: list[tuple[float, float, float]]
    path_xy: list[tuple[float, float]]
    duration_s: float

    def summary(self) -> dict:
        return {
            "reached": self.reached,
            "final_goal_distance_m": round(self.final_goal_distance, 4),
            "min_true_clearance_m": round(self.min_true_clearance, 4),
            "waypoints": len(self.path_xy),
            "duration_s": round(self.duration_s, 2),
        }


def run_navigation(
    mapping: MappingResult,
    goal_xy: tuple[float, float],
    gains: ControllerGains | None = None,
    half_width: float | None = None,
    margin: float = 0.3,
    downsample_spacing: float = 0.3,
    control_every: int = 2,
    max_duration_s: float = 120.0,
) -> NavigationResult:
    """Drive to a goal on the SLAM map while localizing against it.

    Map updates are frozen (pure localization); the safety record is the
    ground-truth obstacle distance at the true pose, which the acceptance
    bound compares against the planner's clearance.
    """
    world = mapping.world
    sim = mapping.sim
    filt = mapping.filter
    gains = gains or ControllerGains(pos_tol=0.25, theta_tol=0.12, v_max=0.4,
                                     final_pos_tol=0.08)
    if half_width is None:
        half_width = world.robot.half_width

    # plan on the best particle's map
    pose_est, grid_msg = filt.estimate()
    best = filt.best_particle()
    probs = 1.0 / (1.0 + np.exp(-best.grid))
    g = filt.config.grid
    slam_grid = Grid2D(probs >= 0.5, g.resolution, g.origin_x, g.origin_y)
    planned = plan(slam_grid, (pose_est["x"], pose_est["y"]), goal_xy, half_width, margin)
    if planned is None:
        raise ValueError("no path to goal on the SLAM map")
    path = downsample(planned, downsample_spacing)

    true_edt = distance_transform(world.grid, world.resolution)
    true_grid = Grid2D(world.grid, world.resolution)

    ctrl = ControllerState(gains)
    scan_every = 5
    steps = int(max_duration_s / world.dt)
    min_clearance = math.inf
    true_poses = []
    last_scan_t = None
    twist = {"v": 0.0, "w": 0.0}
    k = 0
    for k in range(steps):
        if (k + 1) % control_every == 0 and not ctrl.done:
            est = filt.best_pose()
            twist = pd_step(
                ctrl, {"x": est[0], "y": est[1], "theta": est[2]}, path,
                world.dt * control_every,
            )
        sim.set_twist_command(twist["v"], twist["w"])
        sim.step()
        s = sim.state
        true_poses.append((s.x, s.y, s.theta))
        ix, iy = true_grid.cell_of(s.x, s.y)
        if true_grid.in_bounds(ix, iy):
            min_clearance = min(min_clearance, float(true_edt[iy, ix]))
        if (k + 1) % scan_every == 0:
            scan = sim.scan()
            now = sim.sim_time
            if last_scan_t is not None:
                filt.predict(twist["v"], twist["w"], now - last_scan_t)
            last_scan_t = now
            filt.weight(scan)  # localization only: maps stay frozen
            filt.resample_if_needed()
        if ctrl.done:
            break

    s = sim.state
    final_dist = math.hypot(s.x - goal_xy[0], s.y - goal_xy[1])
    return NavigationResult(
        reached=ctrl.done and final_dist <= gains.pos_tol,
        final_goal_distance=final_dist,
        min_true_clearance=min_clearance,
        true_poses=true_poses,
        path_xy=list(path.waypoints),
        duration_s=(k + 1) * world.dt,
    )


# ---------------------------------------------------------------------------
# demo entry point with rendered figures


def render_figures(mapping: MappingResult, nav: NavigationResult | None, out_dir) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    g = mapping.filter.config.grid
    best = mapping.filter.best_particle()
    probs = 1.0 / (1.0 + np.exp(-best.grid))
    extent = (g.origin_x, g.origin_x + g.nx * g.resolution,
              g.origin_y, g.origin_y + g.ny * g.resolution)

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(1.0 - probs, cmap="gray", origin="lower", extent=extent, vmin=0, vmax=1)
    tx = [p[0] for p in mapping.true_poses]
    ty = [p[1] for p in mapping.true_poses]
    ex = [p[0] for p in mapping.est_poses]
    ey = [p[1] for p in mapping.est_poses]
    ax.plot(tx, ty, "g-", lw=1.5, label="ground truth")
    ax.plot(ex, ey, "r--", lw=1.2, label="slam estimate")
    ax.legend(loc="upper right")
    ax.set_title("occupancy map and trajectories")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(out / "slam_map.png", dpi=120)
    plt.close(fig)
    written.append("slam_map.png")

    if nav is not None:
        fig, ax = plt.subplots(figsize=(6, 6))
        ax.imshow(~mapping.world.grid, cmap="gray", origin="lower",
                  extent=(0, mapping.world.width, 0, mapping.world.height), vmin=0, vmax=1)
        px = [p[0] for p in nav.path_xy]
        py = [p[1] for p in nav.path_xy]
        nx_ = [p[0] for p in nav.true_poses]
        ny_ = [p[1] for p in nav.true_poses]
        ax.plot(px, py, "b.-", lw=1.2, ms=4, label="planned path")
        ax.plot(nx_, ny_, "g-", lw=1.5, label="driven")
        ax.plot(px[-1], py[-1], "r*", ms=14, label="goal")
        ax.legend(loc="upper right")
        ax.set_title("navigation on the SLAM map")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.tight_layout()
        fig.savefig(out / "navigation.png", dpi=120)
        plt.close(fig)
        written.append("navigation.png")
    return written


def run_mapping_demo(world_path, script_path, out_dir, seed: int = 0,
                     particles: int = 50, goal: tuple[float, float] | None = None) -> dict:
    world = WorldModel.from_yaml(world_path)
    world.seed = seed
    script = ScriptedSource.from_csv(script_path)
    mapping = run_mapping(world, script, particles=particles, seed=seed)
    nav = None
    if goal is None:
        goal = (world.width - 2.0, world.height - 2.0)
    try:
        nav = run_navigation(mapping, goal)
    except ValueError:
        nav = None
    figures = render_figures(mapping, nav, out_dir)

    # delimited outputs next to the figures
    out = Path(out_dir)
    with open(out / "trajectory.csv", "w") as fh:
        fh.write("true_x,true_y,true_theta,est_x,est_y,est_theta\n")
        for (tx, ty, tth), (ex, ey, eth) in zip(mapping.true_poses, mapping.est_poses):
            fh.write(f"{tx},{ty},{tth},{ex},{ey},{eth}\n")
    summary = {"mapping": mapping.summary(), "figures": figures}
    if nav is not None:
        summary["navigation"] = nav.summary()
    return summary
