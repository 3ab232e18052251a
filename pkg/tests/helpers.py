"""Independent reference implementations shared by the tests."""

from __future__ import annotations

import math

import numpy as np
from shapely.geometry import MultiPoint
from shapely.ops import unary_union

from mapfree.core import Trajectory


def box_polygon_points(x: float, y: float, h: float, length: float, width: float) -> list[tuple[float, float]]:
    c, s = math.cos(h), math.sin(h)
    out = []
    for lon, lat in ((0.5, 0.5), (0.5, -0.5), (-0.5, -0.5), (-0.5, 0.5)):
        dx, dy = lon * length, lat * width
        out.append((x + c * dx - s * dy, y + s * dx + c * dy))
    return out


def ego_boxes_swept(traj: Trajectory, length: float, width: float):
    """Union of convex hulls of the ego box at consecutive poses (origin included)."""
    poses = [tuple(p) for p in np.column_stack([traj.xy, traj.heading])]
    if traj.origin is not None:
        poses.insert(0, tuple(traj.origin[:3]))
    hulls = []
    for a, b in zip(poses[:-1], poses[1:]):
        pts = box_polygon_points(*a, length, width) + box_polygon_points(*b, length, width)
        hulls.append(MultiPoint(pts).convex_hull)
    return unary_union(hulls)


def random_expert_trajectory(rng: np.random.Generator, v0: float, a0: float, k0: float) -> Trajectory:
    """Unicycle roll-out whose first two steps hold (a0, k0); later steps wander.

    The start pose is random so the database has to re-align it.
    """
    x, y, h = rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-math.pi, math.pi)
    origin = (x, y, h, v0)
    v = v0
    rows = []
    acc, kap = a0, k0
    for k in range(30):
        if k >= 2:
            acc = float(np.clip(acc + rng.normal(0, 0.5), -4, 3))
            kap = float(np.clip(kap + rng.normal(0, 0.01), -0.2, 0.2))
        v_new = max(v + acc * 0.1, 0.0)
        d = 0.5 * (v + v_new) * 0.1
        h_mid = h + 0.5 * kap * d
        x, y = x + d * math.cos(h_mid), y + d * math.sin(h_mid)
        h += kap * d
        v = v_new
        rows.append((0.1 * (k + 1), x, y, h, v))
    return Trajectory(np.array(rows), "lane_keep", "human", np.array(origin))


def rotate_into(traj: Trajectory) -> np.ndarray:
    """Waypoints expressed relative to the trajectory's own start pose."""
    x0, y0, h0, _ = traj.origin
    c, s = math.cos(h0), math.sin(h0)
    wp = traj.waypoints.copy()
    dx, dy = wp[:, 1] - x0, wp[:, 2] - y0
    wp[:, 1], wp[:, 2] = c * dx + s * dy, -s * dx + c * dy
    wp[:, 3] -= h0
    return wp
