"""FastSLAM: a Rao-Blackwellized particle filter over robot trajectories.

Each particle carries a pose hypothesis and its own log-odds occupancy grid
conditioned on that trajectory; no state is shared between particles except
through resampling copies.

Per scan the filter runs:

  predict      exact-arc motion with per-particle Gaussian noise on (v, w)
               plus heading jitter
  weight       endpoint likelihood z_hit * p_occ(endpoint) + z_rand over
               every stride-th beam that hit something (max-range beams are
               uninformative and skipped); weights renormalized
  update_maps  free-space carving along each beam (endpoint cell excluded)
               and occupancy evidence at hit endpoints, log-odds clamped
  resample     low-variance (systematic) resampling when
               N_eff = 1 / sum(w^2) drops below half the particle count

Determinism: every random draw comes from per-particle PCG64 streams derived
from (seed, particle index) plus one shared resampling stream, so a fixed
seed and input log reproduce bit-identical estimates regardless of timing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import standard
from .geom import arc_step, wrap_angle

LOG_ODDS_CLAMP = 6.0
L_OCC = 0.85
L_FREE = -0.4
Z_HIT = 0.75
Z_RAND = 0.25


@dataclass
class GridSpec:
    width_m: float
    height_m: float
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        self.nx = int(math.ceil(self.width_m / self.resolution))
        self.ny = int(math.ceil(self.height_m / self.resolution))


@dataclass
class SlamConfig:
    grid: GridSpec
    particles: int = 50
    seed: int = 0
    sigma_v: float = 0.05  # m/s
    sigma_w: float = 0.08  # rad/s
    sigma_theta: float = 0.005  # rad per prediction step
    z_hit: float = Z_HIT
    z_rand: float = Z_RAND
    beam_stride: int = 4  # weighting subsample
    map_stride: int = 1  # map updates integrate every beam by default
    l_occ: float = L_OCC
    l_free: float = L_FREE
    clamp: float = LOG_ODDS_CLAMP
    neff_fraction: float = 0.5

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles")


class Particle:
    __slots__ = ("x", "y", "theta", "log_weight", "grid")

    def __init__(self, x, y, theta, log_weight, grid):
        self.x = x
        self.y = y
        self.theta = theta
        self.log_weight = log_weight
        self.grid = grid  # float32 log-odds, 0 = unknown

    def copy(self) -> "Particle":
        return Particle(self.x, self.y, self.theta, self.log_weight, self.grid.copy())


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


class ParticleSet:
    def __init__(self, config: SlamConfig, initial_pose=(0.0, 0.0, 0.0)):
        self.config = config
        g = config.grid
        x, y, theta = initial_pose
        self.particles = [
            Particle(x, y, theta, -math.log(config.particles),
                     np.zeros((g.ny, g.nx), dtype=np.float32))
            for _ in range(config.particles)
        ]
        self._rngs = [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, i))))
            for i in range(config.particles)
        ]
        self._resample_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((config.seed, 0x5E5A)))
        )
        self.resample_count = 0

    # -- filter steps --

    def predict(self, v: float, w: float, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        c = self.config
        for p, rng in zip(self.particles, self._rngs):
            nv = v + rng.normal() * c.sigma_v
            nw = w + rng.normal() * c.sigma_w
            jitter = rng.normal() * c.sigma_theta
            p.x, p.y, p.theta = arc_step(p.x, p.y, p.theta, nv, nw, dt)
            p.theta = wrap_angle(p.theta + jitter)

    def weight(self, scan: dict) -> None:
        c = self.config
        g = c.grid
        angles = np.asarray(scan["angles"])
        ranges = np.asarray(scan["ranges"])
        range_max = scan["range_max"]
        idx = np.arange(0, len(ranges), c.beam_stride)
        idx = idx[ranges[idx] < range_max]  # max-range beams carry no endpoint
        if len(idx):
            a = angles[idx]
            r = ranges[idx]
            for p in self.particles:
                wa = p.theta + a
                ex = p.x + r * np.cos(wa)
                ey = p.y + r * np.sin(wa)
                ix = np.floor((ex - g.origin_x) / g.resolution).astype(np.int64)
                iy = np.floor((ey - g.origin_y) / g.resolution).astype(np.int64)
                inside = (ix >= 0) & (ix < g.nx) & (iy >= 0) & (iy < g.ny)
                p_occ = np.full(len(idx), 0.5)  # outside the grid: unknown
                p_occ[inside] = logistic(p.grid[iy[inside], ix[inside]])
                p.log_weight += float(np.sum(np.log(c.z_hit * p_occ + c.z_rand)))
        self._renormalize()

    def _renormalize(self) -> None:
        logs = np.array([p.log_weight for p in self.particles])
        lse = float(np.logaddexp.reduce(logs))
        for p in self.particles:
            p.log_weight -= lse

    def weights(self) -> np.ndarray:
        return np.exp([p.log_weight for p in self.particles])

    def update_maps(self, scan: dict) -> None:
        c = self.config
        g = c.grid
        angles = np.asarray(scan["angles"])
        ranges = np.asarray(scan["ranges"])
        range_max = scan["range_max"]
        beams = np.arange(0, len(ranges), c.map_stride)
        a = angles[beams]
        r = ranges[beams]
        hit = r < range_max
        step = g.resolution / 2.0
        for p in self.particles:
            self._carve(p, a, r, hit, step, g, c)

    @staticmethod
    def _carve(p: Particle, a, r, hit, step, g, c) -> None:
        wa = p.theta + a
        cos_a = np.cos(wa)
        sin_a = np.sin(wa)
        ex = p.x + r * cos_a
        ey = p.y + r * sin_a
        eix = np.floor((ex - g.origin_x) / g.resolution).astype(np.int64)
        eiy = np.floor((ey - g.origin_y) / g.resolution).astype(np.int64)
        e_inside = (eix >= 0) & (eix < g.nx) & (eiy >= 0) & (eiy < g.ny)
        endpoint_flat = np.where(e_inside, eiy * g.nx + eix, -1)

        # free-space samples along each beam at half-resolution spacing
        counts = np.maximum((r / step).astype(np.int64), 0)
        total = int(counts.sum())
        if total:
            beam_of = np.repeat(np.arange(len(r)), counts)
            offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
            within = np.arange(total) - np.repeat(offsets, counts)
            ts = within * step
            sx = p.x + ts * cos_a[beam_of]
            sy = p.y + ts * sin_a[beam_of]
            ix = np.floor((sx - g.origin_x) / g.resolution).astype(np.int64)
            iy = np.floor((sy - g.origin_y) / g.resolution).astype(np.int64)
            inside = (ix >= 0) & (ix < g.nx) & (iy >= 0) & (iy < g.ny)
            flat = iy * g.nx + ix
            keep = inside & (flat != endpoint_flat[beam_of])  # traversal excludes endpoint
            # one free update per (beam, cell) regardless of sample density
            combo = beam_of[keep].astype(np.int64) * (g.nx * g.ny) + flat[keep]
            cells = np.unique(combo) % (g.nx * g.ny)
            grid_flat = p.grid.reshape(-1)
            np.add.at(grid_flat, cells, np.float32(c.l_free))

        occ_cells = endpoint_flat[hit & e_inside]
        if len(occ_cells):
            grid_flat = p.grid.reshape(-1)
            np.add.at(grid_flat, occ_cells, np.float32(c.l_occ))
        np.clip(p.grid, -c.clamp, c.clamp, out=p.grid)

    def n_eff(self) -> float:
        w = self.weights()
        return float(1.0 / np.sum(w * w))

    def resample_if_needed(self) -> bool:
        m = len(self.particles)
        if self.n_eff() >= m * self.config.neff_fraction:
            return False
        self.resample(self.weights())
        return True

    def resample(self, weights: np.ndarray) -> None:
        """Low-variance systematic resampling with one shared uniform offset."""
        m = len(self.particles)
        u0 = float(self._resample_rng.uniform(0.0, 1.0 / m))
        positions = u0 + np.arange(m) / m
        cumulative = np.cumsum(weights)
        cumulative[-1] = 1.0  # guard against float round-off
        indices = np.searchsorted(cumulative, positions, side="right")
        self.particles = [self.particles[i].copy() for i in indices]
        for p in self.particles:
            p.log_weight = -math.log(m)
        self.resample_count += 1

    # -- outputs --

    def best_particle(self) -> Particle:
        return max(self.particles, key=lambda p: p.log_weight)

    def best_pose(self) -> tuple[float, float, float]:
        p = self.best_particle()
        return p.x, p.y, p.theta

    def mean_position(self) -> tuple[float, float]:
        w = self.weights()
        xs = np.array([p.x for p in self.particles])
        ys = np.array([p.y for p in self.particles])
        return float(np.dot(w, xs)), float(np.dot(w, ys))

    def estimate(self, stamp_us: int = 0) -> tuple[dict, dict]:
        """(pose_2d_t, occupancy_grid_t) from the highest-weight particle."""
        p = self.best_particle()
        g = self.config.grid
        probs = logistic(p.grid).astype(np.float32)
        pose = {"x": p.x, "y": p.y, "theta": p.theta}
        grid_msg = {
            "header": standard.make_header(stamp_us, "map"),
            "origin": {"x": g.origin_x, "y": g.origin_y, "theta": 0.0},
            "resolution": g.resolution,
            "width": g.nx,
            "height": g.ny,
            "cells": probs.reshape(-1).tolist(),
        }
        return pose, grid_msg


class SlamNode:
    """Subscribes commanded twists and scans; publishes pose and map.

    The filter steps once per scan: predict with the twist held over the
    inter-scan interval, then weight / map / resample.
    """

    def __init__(self, node, config: SlamConfig, initial_pose=(0.0, 0.0, 0.0),
                 scan_channel: str = "sim/scan", twist_channels=("teleop/twist",),
                 map_rate_hz: float = 1.0):
        self.node = node
        self.filter = ParticleSet(config, initial_pose)
        self._twist = (0.0, 0.0)
        self._last_scan_us: int | None = None
        self._map_interval_us = int(1e6 / map_rate_hz)
        self._last_map_us: int | None = None
        self.pub_pose = node.create_publisher("pose", standard.pose_2d_t)
        self.pub_map = node.create_publisher("map", standard.occupancy_grid_t)
        node.create_subscriber(scan_channel, standard.laser_scan_t, callback=self._on_scan)
        for ch in twist_channels:
            node.create_subscriber(ch, standard.twist_2d_t, callback=self._on_twist)

    def _on_twist(self, value) -> None:
        self._twist = (value["v"], value["w"])

    def _on_scan(self, scan) -> None:
        stamp_us = standard.header_stamp_us(scan["header"])
        if self._last_scan_us is not None:
            dt = (stamp_us - self._last_scan_us) / 1e6
            if dt > 0:
                self.filter.predict(self._twist[0], self._twist[1], dt)
        self._last_scan_us = stamp_us
        self.filter.weight(scan)
        self.filter.update_maps(scan)
        self.filter.resample_if_needed()
        pose, grid_msg = self.filter.estimate(stamp_us)
        self.pub_pose.publish(pose)
        if self._last_map_us is None or stamp_us - self._last_map_us >= self._map_interval_us:
            self._last_map_us = stamp_us
            self.pub_map.publish(grid_msg)

    def run(self, rate_hz: float = 50.0) -> None:
        self.node.spin(rate_hz)
