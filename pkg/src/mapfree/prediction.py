"""Scene-level grid forecasting stand-ins: kinematic agent forecasts, their
rasterised occupancy grids, focal-loss supervision and lane priors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import DT, HORIZON_STEPS, horizon_times
from .core import AgentTrack, Landmark, Trajectory
from .geometry import ReferenceLine, box_corners, polyline_distance, wrap_angle
from .raster import GridGeometry, fill_polygon

LANE_HALF_WIDTH = 1.75
FOCAL_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    geometry: GridGeometry
    data: np.ndarray  # (T, H, W) probabilities

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.shape != (HORIZON_STEPS,) + self.geometry.shape:
            raise ValueError(f"prediction grid must be {(HORIZON_STEPS,) + self.geometry.shape}, got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, geometry: GridGeometry, dtype=np.float32) -> "PredictionGrid":
        return cls(geometry, np.zeros((HORIZON_STEPS,) + geometry.shape, dtype))


@dataclass(frozen=True)
class LanePrior:
    totals: tuple[float, ...]  # accumulated probability per landmark, input order
    selected: tuple[int, ...]  # indices into the landmark list, highest first


@dataclass(frozen=True, eq=False)
class AgentForecast:
    agent_id: str
    trajectory: Trajectory
    length: float
    width: float


class ForecastError(ValueError):
    pass


def _agent_speed(agent: AgentTrack) -> float:
    v = agent.history[-1, 4]
    if math.isfinite(v):
        return float(v)
    if len(agent.history) < 2:
        raise ForecastError(f"agent {agent.id}: speed unobservable from a single state")
    a, b = agent.history[-2], agent.history[-1]
    return float(np.hypot(b[1] - a[1], b[2] - a[2]) / (b[0] - a[0]))


def _agent_accel(agent: AgentTrack, window: int = 3, max_abs: float = 8.0) -> float:
    """Mean acceleration over the last ``window`` steps of recorded speeds (0 if unavailable)."""
    h = agent.history
    if len(h) < 2 or not np.all(np.isfinite(h[-window - 1:, 4])):
        return 0.0
    k = min(window, len(h) - 1)
    a = (h[-1, 4] - h[-1 - k, 4]) / (h[-1, 0] - h[-1 - k, 0])
    return float(np.clip(a, -max_abs, max_abs))


def travel(v: float, a: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance and speed under constant acceleration, holding at v = 0."""
    speed = np.maximum(v + a * t, 0.0)
    d = v * t + 0.5 * a * t * t
    if a < 0:
        d = np.where(speed <= 0.0, v * v / (-2.0 * a), d)
    return d, speed


def constant_velocity(agent: AgentTrack, speed: float | None = None, accel: float = 0.0) -> Trajectory:
    """Straight-line forecast along the current heading; with ``accel`` the
    speed changes at that rate until it reaches zero."""
    _, x, y, h, _ = agent.history[-1]
    v = _agent_speed(agent) if speed is None else speed
    t = horizon_times()
    d, vt = travel(v, accel, t)
    return Trajectory.from_arrays(x + d * math.cos(h), y + d * math.sin(h),
                                  np.full_like(t, h), vt, origin=(x, y, h, v), label=agent.id)


def constant_acceleration(agent: AgentTrack) -> Trajectory:
    return constant_velocity(agent, accel=_agent_accel(agent))


def _local_geometry(points: np.ndarray, margin: float, resolution: float) -> GridGeometry:
    lo = points.min(axis=0) - margin
    hi = points.max(axis=0) + margin
    cols = int(math.ceil((hi[0] - lo[0]) / resolution)) + 1
    rows = int(math.ceil((hi[1] - lo[1]) / resolution)) + 1
    return GridGeometry(rows, cols, resolution, (float(lo[0]), float(lo[1])))


def forecast_agents(agents: Sequence[AgentTrack], landmarks: Sequence[Landmark] = (),
                    horizon: float = 3.0, corridor_half_width: float = LANE_HALF_WIDTH,
                    lateral_settle: float = 1.5, resolution: float = 0.2,
                    max_heading_gap: float = math.radians(60)) -> list[Trajectory]:
    """One 30-step forecast per agent.

    Each agent's constant-acceleration footprint is rasterised and accumulated
    over nearby lane centres; when a lane collects probability the agent is
    forecast along that lane with its current speed and acceleration, its
    lateral offset decaying to zero over ``lateral_settle`` seconds.
    Otherwise the straight constant-acceleration forecast is returned.
    """
    if abs(horizon - HORIZON_STEPS * DT) > 1e-9:
        raise ValueError("forecast horizon is fixed by the global time base")
    lanes = [lm for lm in landmarks if lm.label == "lane_center" and len(lm.points) >= 2]
    refs: dict[int, ReferenceLine] = {}
    out = []
    for agent in agents:
        if len(agent.history) < 2 and not math.isfinite(agent.history[-1, 4]):
            raise ForecastError(f"agent {agent.id}: needs >= 2 history states or an explicit speed")
        cv = constant_acceleration(agent)
        if not lanes:
            out.append(cv)
            continue
        geom = _local_geometry(np.vstack([cv.path_with_origin()]), max(agent.length, agent.width) + 1.0, resolution)
        grid = ground_truth_grid([cv], [(agent.length, agent.width)], geom)
        prior = accumulate_lane_prior(grid, lanes, corridor_half_width)
        heading = agent.history[-1, 3]
        chosen = None
        for idx in prior.selected:
            if prior.totals[idx] <= 0:
                break
            ref = refs.get(idx)
            if ref is None:
                ref = refs[idx] = ReferenceLine(lanes[idx].points)
            s0, l0 = ref.project(agent.history[-1, 1:3][None, :])
            s0 = float(np.clip(s0[0], 0.0, ref.length))
            if abs(wrap_angle(heading - ref.heading(s0))) <= max_heading_gap:
                chosen = (ref, s0, float(l0[0]))
                break
        if chosen is None:
            out.append(cv)
            continue
        ref, s0, l0 = chosen
        out.append(along_lane(ref, s0, l0, float(cv.origin[3]), lateral_settle, cv.origin, agent.id,
                              _agent_accel(agent)))
    return out


def along_lane(ref: ReferenceLine, s0: float, l0: float, v: float, lateral_settle: float,
               origin, label: str = "", accel: float = 0.0) -> Trajectory:
    t = horizon_times()
    d, vt = travel(v, accel, t)
    s = s0 + d
    l = l0 * np.clip(1.0 - t / lateral_settle, 0.0, None) if lateral_settle > 0 else np.zeros_like(t)
    inside = np.clip(s, 0.0, ref.length)
    p, tan, nrm, _ = ref.frame(inside)
    xy = p + (s - inside)[:, None] * tan + l[:, None] * nrm
    heading = np.arctan2(tan[:, 1], tan[:, 0])
    return Trajectory.from_arrays(xy[:, 0], xy[:, 1], heading, vt, origin=origin, label=label)


def ground_truth_grid(futures: Sequence[Trajectory], boxes: Sequence[tuple[float, float]],
                      geometry: GridGeometry) -> PredictionGrid:
    """Cell (t, i, j) is 1 iff some agent box at step t covers the cell centre."""
    grid = PredictionGrid.zeros(geometry)
    for traj, (length, width) in zip(futures, boxes):
        if len(traj.waypoints) != HORIZON_STEPS:
            raise ValueError("futures must cover the 30-step horizon")
        corners = box_corners(traj.xy[:, 0], traj.xy[:, 1], traj.heading, length, width)
        for t in range(HORIZON_STEPS):
            mask = fill_polygon(geometry, corners[t])
            grid.data[t][mask] = 1.0
    return grid


def focal_loss(pred: PredictionGrid, truth: PredictionGrid, eps: float = FOCAL_EPS) -> float:
    """Pixel-wise focal loss with focusing exponent 2, summed over (t, i, j)."""
    if pred.geometry != truth.geometry or pred.data.shape != truth.data.shape:
        raise ValueError("prediction and truth grids have different geometry")
    g_hat = np.clip(np.asarray(pred.data, float), eps, 1.0 - eps)
    g = np.asarray(truth.data, float)
    loss = g * (1.0 - g_hat) ** 2 * np.log(g_hat) + (1.0 - g) * g_hat**2 * np.log(1.0 - g_hat)
    return float(-np.sum(loss))


def accumulate_lane_prior(grid: PredictionGrid, landmarks: Sequence[Landmark],
                          half_width: float = LANE_HALF_WIDTH, top_k: int = 2) -> LanePrior:
    """Sum grid probability over each landmark's corridor across all steps."""
    if not landmarks:
        return LanePrior((), ())
    t_idx, rows, cols = np.nonzero(grid.data)
    totals = np.zeros(len(landmarks))
    if len(t_idx):
        vals = np.asarray(grid.data[t_idx, rows, cols], float)
        # Per-cell mass summed over time first; corridor membership is static.
        flat = rows * grid.geometry.cols + cols
        uniq, inverse = np.unique(flat, return_inverse=True)
        mass = np.bincount(inverse, weights=vals)
        centers = grid.geometry.cell_to_world(uniq // grid.geometry.cols, uniq % grid.geometry.cols)
        for k, lm in enumerate(landmarks):
            inside = polyline_distance(centers, lm.points) <= half_width
            totals[k] = float(np.sum(mass[inside]))
    order = sorted(range(len(landmarks)), key=lambda k: (-totals[k], k))
    return LanePrior(tuple(float(v) for v in totals), tuple(order[:top_k]))
