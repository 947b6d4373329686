"""Arithmetic on the circle R/Z.

Angles are stored as plain floats reduced to [0, 1).  Differences live in
(-1/2, 1/2] so that ``b + angdiff(a, b) == a`` modulo 1.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "angle_mod",
    "angdiff",
    "mod_distance",
    "lift_angles",
    "winding_number",
]


def angle_mod(x):
    """Reduce a real number (or array) to the representative in [0, 1)."""
    y = np.mod(x, 1.0)
    # np.mod can return 1.0 when x is a tiny negative number
    y = np.where(y >= 1.0, y - 1.0, y)
    if np.ndim(x) == 0:
        return float(y)
    return y


def angdiff(a, b=0.0):
    """Signed circle difference a - b, wrapped to (-1/2, 1/2]."""
    d = np.mod(np.asarray(a, dtype=float) - b, 1.0)
    d = np.where(d > 0.5, d - 1.0, d)
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return float(d)
    return d


def mod_distance(a, b=0.0):
    """Metric distance on R/Z, in [0, 1/2]."""
    return np.abs(angdiff(a, b))


def lift_angles(values):
    """Continuous lift of a sequence of angles.

    Consecutive jumps are resolved through the shortest circle arc, so the
    lift is unique once its first entry is pinned to values[0].
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("lift_angles expects a 1-d sequence")
    if v.size == 0:
        return v.copy()
    steps = angdiff(v[1:], v[:-1])
    out = np.empty_like(v)
    out[0] = v[0]
    out[1:] = v[0] + np.cumsum(steps)
    return out


def winding_number(loop_values):
    """Integer winding of a closed loop of angles (last sample != first)."""
    v = np.asarray(loop_values, dtype=float)
    closed = np.concatenate([v, v[:1]])
    steps = angdiff(closed[1:], closed[:-1])
    total = float(np.sum(steps))
    return int(np.rint(total))
