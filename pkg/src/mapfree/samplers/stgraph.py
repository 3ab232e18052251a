"""Space-time (s-t) occupancy along a reference line."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..config import HORIZON_STEPS, horizon_times
from ..core import Trajectory
from ..geometry import ReferenceLine, wrap_angle


@dataclass(frozen=True, eq=False)
class ObstacleBand:
    """Blocked arc-length interval per horizon step; NaN where the obstacle
    is outside the ego corridor."""

    obstacle_id: str
    lower: np.ndarray
    upper: np.ndarray
    speed: float  # along-route speed of the obstacle centre
    static: bool = False

    def present(self) -> np.ndarray:
        return np.isfinite(self.lower)


@dataclass(frozen=True, eq=False)
class StGraph:
    times: np.ndarray
    s0: float
    bands: tuple[ObstacleBand, ...] = ()

    def occupied(self, s, k: int) -> bool:
        return any(b.present()[k] and b.lower[k] <= s <= b.upper[k] for b in self.bands)

    def region(self, s: float, k: int, band: int) -> str:
        """'follow' below the band, 'overtake' above it, 'occupied' inside,
        'free' when the obstacle is absent at step k."""
        b = self.bands[band]
        if not b.present()[k]:
            return "free"
        if s < b.lower[k]:
            return "follow"
        if s > b.upper[k]:
            return "overtake"
        return "occupied"

    def collides(self, s: np.ndarray) -> bool:
        """Whether an s(t) profile (30 steps) enters any band."""
        s = np.asarray(s, float)
        for b in self.bands:
            p = b.present()
            if np.any(p & (s >= np.where(p, b.lower, 0)) & (s <= np.where(p, b.upper, 0))):
                return True
        return False


def _extent_along(length: float, width: float, rel_heading) -> np.ndarray:
    return 0.5 * length * np.abs(np.cos(rel_heading)) + 0.5 * width * np.abs(np.sin(rel_heading))


def build_st_graph(ref: ReferenceLine, s0: float, forecasts: Sequence[tuple[str, Trajectory, float, float]] = (),
                   static_polygons: Sequence[np.ndarray] = (), ego_size: tuple[float, float] = (4.8, 1.9),
                   min_gap: float = 2.0, headway: float = 0.5, lateral_margin: float = 0.3) -> StGraph:
    """Project forecasts ``(id, trajectory, length, width)`` and static
    polygons onto the reference line.

    At each step the band is the obstacle's projected centre plus/minus the
    half lengths of ego and obstacle and a safety gap
    ``max(min_gap, headway * v_obstacle)``.  Obstacles are in the corridor
    when their lateral offset is within the half widths plus a margin.
    """
    if min_gap < 0 or headway < 0:
        raise ValueError("gap parameters must be non-negative")
    t = horizon_times()
    ego_half_len, ego_half_w = 0.5 * ego_size[0], 0.5 * ego_size[1]
    bands = []
    for oid, traj, length, width in forecasts:
        s, l = ref.project(traj.xy)
        inside = (s > 1e-6) & (s < ref.length - 1e-6)
        s_c = np.clip(s, 0.0, ref.length)
        rel = wrap_angle(traj.heading - ref.heading(s_c))
        ext_lat = 0.5 * length * np.abs(np.sin(rel)) + 0.5 * width * np.abs(np.cos(rel))
        in_corr = inside & (np.abs(l) <= ego_half_w + ext_lat + lateral_margin)
        v_along = traj.v * np.cos(rel)
        half = ego_half_len + _extent_along(length, width, rel) + np.maximum(min_gap, headway * np.abs(traj.v))
        lower = np.where(in_corr, s - half, np.nan)
        upper = np.where(in_corr, s + half, np.nan)
        if not np.any(in_corr):
            continue
        bands.append(ObstacleBand(str(oid), lower, upper, float(np.mean(v_along[in_corr]))))
    for i, poly in enumerate(static_polygons):
        poly = np.asarray(poly, float)
        s, l = ref.project(poly)
        inside = (s > 1e-6) & (s < ref.length - 1e-6)
        if not np.any(inside):
            continue
        s, l = s[inside], l[inside]
        straddles = l.min() < 0 < l.max()
        if not straddles and np.min(np.abs(l)) > ego_half_w + lateral_margin:
            continue
        gap = ego_half_len + min_gap
        lo = np.full(HORIZON_STEPS, s.min() - gap)
        hi = np.full(HORIZON_STEPS, s.max() + gap)
        bands.append(ObstacleBand(f"static{i}", lo, hi, 0.0, static=True))
    return StGraph(t, float(s0), tuple(bands))


def point_obstacle_band(s_center: float, half_extent: float) -> ObstacleBand:
    lo = np.full(HORIZON_STEPS, s_center - half_extent)
    return ObstacleBand("point", lo, lo + 2 * half_extent, 0.0, static=True)


def first_blocking(graph: StGraph, s0: float) -> ObstacleBand | None:
    """Nearest band ahead of ``s0`` at the first step where it is present."""
    best, best_s = None, math.inf
    for b in graph.bands:
        p = np.flatnonzero(b.present())
        if len(p) == 0:
            continue
        lo = b.lower[p[0]]
        if b.upper[p[0]] >= s0 and lo < best_s:
            best, best_s = b, lo
    return best
