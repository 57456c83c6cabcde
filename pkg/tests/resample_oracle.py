"""Brute-force resampling oracle, independent of robomesh.logkit.

For every tick it linearly scans the full message list (no bisect, no
incremental state) and applies the stated semantics directly:

  latest  last message at or before the tick; nothing before the first.
  interp  linear interpolation of numeric non-bool fields between the
          bracketing messages; hold after the last; angle fields walk the
          shortest arc and rewrap; non-numeric fields hold like latest.
"""

from __future__ import annotations

import math


def wrap(a: float) -> float:
    while a > math.pi:
        a -= 2 * math.pi
    while a <= -math.pi:
        a += 2 * math.pi
    return a


def dig(value, dotted_path: str):
    cur = value
    for part in dotted_path.split("."):
        cur = cur[part]
    return cur


def sample(messages, t, path, element_index, numeric, angle, mode):
    """messages: list of (time_us, decoded dict), ascending."""
    before = [(mt, mv) for mt, mv in messages if mt <= t]
    after = [(mt, mv) for mt, mv in messages if mt > t]
    if not before:
        return None

    def leaf(v):
        x = dig(v, path)
        return x[element_index] if element_index is not None else x

    a = leaf(before[-1][1])
    if mode == "latest" or not numeric or isinstance(a, bool):
        return a
    if not after:
        return a
    t_a = before[-1][0]
    t_b, v_b = after[0]
    b = leaf(v_b)
    u = (t - t_a) / (t_b - t_a)
    if angle:
        return wrap(a + u * wrap(b - a))
    return a + u * (b - a)
