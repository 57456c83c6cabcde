"""Shared planar geometry: angle wrapping and the exact-arc unicycle step."""

from __future__ import annotations

import math


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def arc_step(x: float, y: float, theta: float, v: float, w: float, dt: float):
    """Integrate the unicycle exactly along a circular arc (straight line as
    the |w| -> 0 limit)."""
    if abs(w) < 1e-9:
        return x + v * math.cos(theta) * dt, y + v * math.sin(theta) * dt, theta
    r = v / w
    nx = x + r * (math.sin(theta + w * dt) - math.sin(theta))
    ny = y - r * (math.cos(theta + w * dt) - math.cos(theta))
    return nx, ny, wrap_angle(theta + w * dt)
