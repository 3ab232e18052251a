"""Cost volume over hand-built feature planes, soft (bilinear) sampling,
trajectory costs, the Diff margin and max-margin training of a linear cost
model.

Every feature plane is normalised to [0, 1].  A plane only has to say what
value each cell centre holds at step ``k``; sampling is bilinear over the
four surrounding cell centres for all planes, so dense arrays and planes
computed on demand (forecast boxes, route progress) behave identically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .config import DT, HORIZON_STEPS, EvaluatorConfig, TrainingConfig, horizon_times
from .core import CandidateSet, EgoState, Route, Trajectory
from .geometry import fit_quartic
from .prediction import AgentForecast, PredictionGrid
from .raster import BevRaster, GridGeometry, OccupancyGrid, inflate, polyline_cells

FEATURES = ("occupancy", "prediction", "route_distance", "lateral_offset", "route_progress", "bias")
N_FEATURES = len(FEATURES)
BOUNDARY_VALUE = 1.0
MODEL_FORMAT_VERSION = 1


class GeometryMismatchError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, trace: list[float], weights: np.ndarray):
        super().__init__(message)
        self.trace = trace
        self.weights = weights


# -- planes ------------------------------------------------------------------------

class DensePlane:
    """Plane backed by an ``(H, W)`` array (static) or ``(T, H, W)`` array."""

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, float)

    def cells(self, rows, cols, k):
        if self.data.ndim == 2:
            return self.data[rows, cols]
        return self.data[k, rows, cols]


class ConstantPlane:
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def cells(self, rows, cols, k):
        return np.full(np.broadcast(rows, cols, k).shape, self.value)


class BoxPlane:
    """Forecast agent boxes rendered on demand.

    ``ramp = 0`` gives the raw occupancy (1 when the cell centre lies inside
    a box at step ``k``, the same rule as polygon rasterisation); ``ramp > 0``
    gives the inflated field ``max(0, 1 - d / ramp)`` with ``d`` the distance
    from the cell centre to the nearest box.
    """

    def __init__(self, geometry: GridGeometry, boxes: np.ndarray, ramp: float = 0.0):
        self.geometry = geometry
        self.boxes = np.asarray(boxes, float).reshape(HORIZON_STEPS, -1, 5)  # x, y, heading, length, width
        self.ramp = float(ramp)

    def cells(self, rows, cols, k):
        rows, cols, k = np.broadcast_arrays(rows, cols, k)
        out = np.zeros(rows.shape)
        if self.boxes.shape[1] == 0:
            return out
        p = self.geometry.cell_to_world(rows, cols)
        for a in range(self.boxes.shape[1]):
            b = self.boxes[k, a]  # (..., 5)
            rel = p - b[..., :2]
            c, s = np.cos(b[..., 2]), np.sin(b[..., 2])
            lon = rel[..., 0] * c + rel[..., 1] * s
            lat = -rel[..., 0] * s + rel[..., 1] * c
            dx = np.abs(lon) - 0.5 * b[..., 3]
            dy = np.abs(lat) - 0.5 * b[..., 4]
            if self.ramp <= 0:
                v = ((dx <= 0) & (dy <= 0)).astype(float)
            else:
                d = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
                v = np.clip(1.0 - d / self.ramp, 0.0, 1.0)
            np.maximum(out, np.nan_to_num(v), out=out)
        return out


class ProgressPlane:
    """``min(1, |arc(cell) - s_ref(t_k)| / scale)``; arc is the route arc
    length of the nearest route cell."""

    def __init__(self, route_arc: np.ndarray, s_ref: np.ndarray | None, scale: float):
        self.route_arc = route_arc
        self.s_ref = None if s_ref is None else np.asarray(s_ref, float)
        self.scale = float(scale)

    def cells(self, rows, cols, k):
        if self.s_ref is None:
            return np.zeros(np.broadcast(rows, cols, k).shape)
        arc = self.route_arc[rows, cols]
        v = np.minimum(1.0, np.abs(arc - self.s_ref[k]) / self.scale)
        return np.where(np.isfinite(v), v, 1.0)


# -- soft sampling -----------------------------------------------------------------

@dataclass(frozen=True)
class SoftSample:
    value: np.ndarray
    grad: np.ndarray      # (..., 2): d value / d (x, y)
    outside: np.ndarray   # bool mask of out-of-extent points


def _corners(geometry: GridGeometry, points):
    row, col = geometry.continuous(points)
    outside = ~((row >= -0.5) & (row <= geometry.rows - 0.5) & (col >= -0.5) & (col <= geometry.cols - 0.5))
    outside |= ~(np.isfinite(row) & np.isfinite(col))
    row = np.clip(np.nan_to_num(row), 0.0, geometry.rows - 1)
    col = np.clip(np.nan_to_num(col), 0.0, geometry.cols - 1)
    r0 = np.minimum(np.floor(row).astype(int), max(geometry.rows - 2, 0))
    c0 = np.minimum(np.floor(col).astype(int), max(geometry.cols - 2, 0))
    r1 = np.minimum(r0 + 1, geometry.rows - 1)
    c1 = np.minimum(c0 + 1, geometry.cols - 1)
    return row - r0, col - c0, r0, r1, c0, c1, outside


def sample_plane(plane, geometry: GridGeometry, points, steps=None, boundary: float = BOUNDARY_VALUE) -> SoftSample:
    """Bilinear value and analytic spatial gradient of ``plane`` at ``points``.

    ``steps`` gives the horizon index per point (broadcast against the point
    array without its last axis).  Points outside the grid extent get
    ``boundary`` with zero gradient and are flagged.
    """
    points = np.asarray(points, float)
    fr, fc, r0, r1, c0, c1, outside = _corners(geometry, points)
    k = np.zeros(fr.shape, int) if steps is None else np.broadcast_to(np.asarray(steps, int), fr.shape)
    v00 = plane.cells(r0, c0, k)
    v01 = plane.cells(r0, c1, k)
    v10 = plane.cells(r1, c0, k)
    v11 = plane.cells(r1, c1, k)
    top = v00 + fc * (v01 - v00)
    bot = v10 + fc * (v11 - v10)
    value = top + fr * (bot - top)
    res = geometry.resolution
    dcol = ((1 - fr) * (v01 - v00) + fr * (v11 - v10)) / res
    drow = (bot - top) / res
    grad = np.stack([dcol, drow], axis=-1)
    value = np.where(outside, boundary, value)
    grad = np.where(outside[..., None], 0.0, grad)
    return SoftSample(value, grad, outside)


def step_index(t) -> np.ndarray:
    """Nearest horizon step (0..29) for times in seconds."""
    return np.clip(np.rint(np.asarray(t, float) / DT).astype(int) - 1, 0, HORIZON_STEPS - 1)


@dataclass(frozen=True, eq=False)
class CostVolume:
    geometry: GridGeometry
    data: np.ndarray  # (T, H, W)

    def __post_init__(self) -> None:
        data = np.asarray(self.data, float)
        if data.shape != (HORIZON_STEPS,) + self.geometry.shape:
            raise GeometryMismatchError(f"cost volume must be {(HORIZON_STEPS,) + self.geometry.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("cost volume has non-finite values")
        object.__setattr__(self, "data", data)


def sample_soft(source, points, t, boundary: float | None = None) -> SoftSample:
    """Soft lookup in a :class:`CostVolume` or :class:`PredictionGrid` at
    ``(x, y, t)``; ``t`` is snapped to the nearest horizon step.  The
    out-of-extent value defaults to the maximum of the source."""
    data = np.asarray(source.data, float)
    if boundary is None:
        boundary = float(data.max()) if data.size else BOUNDARY_VALUE
    return sample_plane(DensePlane(data), source.geometry, points, step_index(t), boundary)


# -- feature planes ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StaticPlanes:
    """Time-invariant part of the feature planes; cheap to reuse across frames."""

    geometry: GridGeometry
    occupancy: np.ndarray
    route_distance: np.ndarray
    lateral_offset: np.ndarray
    route_arc: np.ndarray
    route_points: np.ndarray | None
    config: EvaluatorConfig


def build_static_planes(geometry: GridGeometry, static_mask: np.ndarray, route_points=None,
                        config: EvaluatorConfig | None = None, soft_mask: np.ndarray | None = None) -> StaticPlanes:
    """``soft_mask`` marks half-intensity static cells (e.g. a yield line);
    they contribute half the occupancy field."""
    cfg = config or EvaluatorConfig()
    if static_mask.shape != geometry.shape:
        raise GeometryMismatchError("static mask shape differs from grid geometry")
    res = geometry.resolution
    occ = inflate(static_mask, res, cfg.occupancy_inflation)
    if soft_mask is not None and soft_mask.any():
        occ = np.maximum(occ, 0.5 * inflate(soft_mask, res, cfg.occupancy_inflation))
    route_arc = np.full(geometry.shape, np.nan)
    dist = np.full(geometry.shape, np.inf)
    pts = None
    if route_points is not None:
        pts = np.asarray(route_points, float)
        r, c, arc = polyline_cells(geometry, pts)
        if len(r):
            on = np.zeros(geometry.shape, bool)
            on[r, c] = True
            arc_grid = np.zeros(geometry.shape)
            arc_grid[r, c] = arc
            dist, (ir, ic) = ndimage.distance_transform_edt(~on, sampling=res, return_indices=True)
            route_arc = arc_grid[ir, ic]
    route_distance = np.minimum(1.0, dist / cfg.route_distance_scale)
    lateral = np.minimum(1.0, (np.minimum(dist, 1e6) / cfg.lateral_scale) ** 2)
    return StaticPlanes(geometry, occ, route_distance, lateral, route_arc, pts, cfg)


def polyline_arc_of(point, polyline) -> float:
    """Arc length of the closest point on a polyline."""
    line = np.asarray(polyline, float)
    p = np.asarray(point, float)
    a, ab = line[:-1], np.diff(line, axis=0)
    seg = np.linalg.norm(ab, axis=1)
    t = np.clip(np.sum((p - a) * ab, axis=1) / np.maximum(seg**2, 1e-18), 0.0, 1.0)
    d = np.linalg.norm(a + t[:, None] * ab - p, axis=1)
    i = int(np.argmin(d))
    return float(np.sum(seg[:i]) + t[i] * seg[i])


def reference_progress(ego: EgoState, route_points, target_speed: float, horizon: float = 3.0) -> np.ndarray:
    """Arc-length schedule s_ref(t_k) from the ego's route position, reaching
    ``target_speed`` with zero acceleration at the end of the horizon."""
    s0 = polyline_arc_of((ego.x, ego.y), route_points)
    prof = fit_quartic(s0, ego.v, ego.a, target_speed, 0.0, horizon)
    t = horizon_times()
    s = prof(t)
    # never schedule backwards motion
    return np.maximum.accumulate(np.maximum(s, s0))


def forecast_boxes(forecasts: Sequence[AgentForecast]) -> np.ndarray:
    boxes = np.zeros((HORIZON_STEPS, len(forecasts), 5))
    for a, f in enumerate(forecasts):
        boxes[:, a, 0:2] = f.trajectory.xy
        boxes[:, a, 2] = f.trajectory.heading
        boxes[:, a, 3] = f.length
        boxes[:, a, 4] = f.width
    return boxes


class _DensePredictionField:
    """Inflated field from a dense prediction grid: per-step distance
    transform of cells with probability >= 0.5, weighted by peak probability."""

    def __init__(self, grid: PredictionGrid, inflation: float):
        data = np.asarray(grid.data, float)
        out = np.zeros_like(data)
        for k in range(HORIZON_STEPS):
            if data[k].any():
                out[k] = inflate(data[k] >= 0.5, grid.geometry.resolution, inflation)
                out[k] = np.maximum(out[k], data[k])
        self.data = out

    def cells(self, rows, cols, k):
        return self.data[k, rows, cols]


@dataclass(frozen=True, eq=False)
class FeatureSample:
    phi: np.ndarray    # (..., 30, F)
    dphi: np.ndarray   # (..., 30, F, 2)
    occ: np.ndarray    # (..., 30)  O_cc samples
    docc: np.ndarray
    pred: np.ndarray   # (..., 30)  raw prediction-grid samples
    dpred: np.ndarray
    outside: np.ndarray


@dataclass(frozen=True, eq=False)
class FeaturePlanes:
    static: StaticPlanes
    prediction_raw: object
    prediction_field: object
    s_ref: np.ndarray | None = None

    @property
    def geometry(self) -> GridGeometry:
        return self.static.geometry

    def planes(self) -> list:
        st = self.static
        return [
            DensePlane(st.occupancy),
            self.prediction_field,
            DensePlane(st.route_distance),
            DensePlane(st.lateral_offset),
            ProgressPlane(st.route_arc, self.s_ref, st.config.progress_scale),
            ConstantPlane(1.0),
        ]

    def with_dynamic(self, forecasts: Sequence[AgentForecast] = (), s_ref=None) -> "FeaturePlanes":
        boxes = forecast_boxes(forecasts)
        g = self.geometry
        return FeaturePlanes(self.static, BoxPlane(g, boxes, 0.0),
                             BoxPlane(g, boxes, self.static.config.prediction_inflation), s_ref)

    def sample(self, points) -> FeatureSample:
        """Features at waypoint positions ``(..., 30, 2)`` (step = axis -2)."""
        points = np.asarray(points, float)
        steps = np.arange(HORIZON_STEPS)
        samples = [sample_plane(p, self.geometry, points, steps) for p in self.planes()]
        phi = np.stack([s.value for s in samples], axis=-1)
        dphi = np.stack([s.grad for s in samples], axis=-2)
        raw = sample_plane(self.prediction_raw, self.geometry, points, steps)
        return FeatureSample(phi, dphi, samples[0].value, samples[0].grad, raw.value, raw.grad, samples[0].outside)

    def dense(self, k: int) -> np.ndarray:
        """All feature planes at step ``k`` as an ``(F, H, W)`` array."""
        rows, cols = np.indices(self.geometry.shape)
        return np.stack([p.cells(rows, cols, k) for p in self.planes()])

    def dense_prediction(self) -> np.ndarray:
        rows, cols = np.indices(self.geometry.shape)
        return np.stack([self.prediction_raw.cells(rows, cols, k) for k in range(HORIZON_STEPS)])


def build_feature_planes(raster: BevRaster, occ: OccupancyGrid | None = None,
                         prediction: PredictionGrid | Sequence[AgentForecast] | None = None,
                         route: Route | None = None, ego: EgoState | None = None,
                         config: EvaluatorConfig | None = None) -> FeaturePlanes:
    """Feature planes from a raster, occupancy grid, prediction and route.

    The static channel of the raster (obstacles, static occupancy and stop
    lines) and, when given, the static part of ``occ`` feed the occupancy
    plane; the route polyline feeds the route planes; the prediction is
    either a dense grid or agent forecasts rendered on demand.
    """
    cfg = config or EvaluatorConfig()
    geom = raster.geometry
    if occ is not None and occ.geometry != geom:
        raise GeometryMismatchError("occupancy grid geometry differs from raster geometry")
    static = raster.channel("static")
    full = static >= 0.99
    soft = (static > 0) & ~full
    if occ is not None:
        full = full | occ.occupied_mask(cfg.include_movable)
    st = build_static_planes(geom, full, None if route is None else route.points, cfg, soft)
    s_ref = None
    if route is not None and ego is not None:
        s_ref = reference_progress(ego, route.points, route.target_speed)
    if isinstance(prediction, PredictionGrid):
        if prediction.geometry != geom:
            raise GeometryMismatchError("prediction grid geometry differs from raster geometry")
        raw = DensePlane(np.asarray(prediction.data, float))
        return FeaturePlanes(st, raw, _DensePredictionField(prediction, cfg.prediction_inflation), s_ref)
    base = FeaturePlanes(st, ConstantPlane(0.0), ConstantPlane(0.0), s_ref)
    return base.with_dynamic(list(prediction or ()), s_ref)


# -- cost model ----------------------------------------------------------------------

@dataclass(eq=False)
class CostModel:
    weights: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 0.5, 0.5, 0.5, 0.0]))
    alpha: float = 1.0
    beta: float = 1.0
    features: tuple[str, ...] = FEATURES

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, float).copy()
        if self.weights.shape != (len(self.features),):
            raise ValueError(f"need {len(self.features)} weights, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ValueError("alpha and beta must be >= 0")

    def to_dict(self) -> dict:
        return {"format_version": MODEL_FORMAT_VERSION, "features": list(self.features),
                "weights": self.weights.tolist(), "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported cost model version {d.get('format_version')!r}")
        if tuple(d["features"]) != FEATURES:
            raise ValueError(f"feature planes {d['features']} do not match {list(FEATURES)}")
        return cls(np.asarray(d["weights"], float), float(d["alpha"]), float(d["beta"]))


def save_model(path: str | Path, model: CostModel, generator=None, config_hash: str = "") -> None:
    d = {"config_hash": config_hash, "cost_model": model.to_dict()}
    if generator is not None:
        d["generator"] = generator.to_dict()
    Path(path).write_text(json.dumps(d, indent=2))


def load_model(path: str | Path):
    """Returns ``(CostModel, generator dict or None)``."""
    d = json.loads(Path(path).read_text())
    return CostModel.from_dict(d["cost_model"]), d.get("generator")


def cost_volume(model: CostModel, planes: FeaturePlanes) -> CostVolume:
    data = np.stack([np.tensordot(model.weights, planes.dense(k), axes=1) for k in range(HORIZON_STEPS)])
    return CostVolume(planes.geometry, data)


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    volume_term: float
    occupancy_term: float
    prediction_term: float
    per_waypoint: np.ndarray
    out_of_extent: bool = False


def trajectory_cost(traj: Trajectory, volume: CostVolume, planes: FeaturePlanes,
                    alpha: float = 1.0, beta: float = 1.0) -> CostBreakdown:
    """E = sum_t [C + alpha * O_cc + beta * G] with soft lookups at each waypoint."""
    c = sample_soft(volume, traj.xy, traj.t)
    fs = planes.sample(traj.xy)
    per = c.value + alpha * fs.occ + beta * fs.pred
    terms = (float(np.sum(c.value)), float(alpha * np.sum(fs.occ)), float(beta * np.sum(fs.pred)))
    return CostBreakdown(float(sum(terms)), *terms, per, bool(c.outside.any() or fs.outside.any()))


@dataclass(frozen=True, eq=False)
class CandidateFeatures:
    """Per-trajectory sums over the horizon; E is linear in these."""

    phi: np.ndarray   # (N, F)
    occ: np.ndarray   # (N,)
    pred: np.ndarray  # (N,)
    xy: np.ndarray    # (N, 30, 2)
    outside: np.ndarray  # (N,)


def candidate_features(planes: FeaturePlanes, trajs: Sequence[Trajectory]) -> CandidateFeatures:
    if len(trajs) == 0:
        z = np.zeros(0)
        return CandidateFeatures(np.zeros((0, N_FEATURES)), z, z, np.zeros((0, HORIZON_STEPS, 2)), z.astype(bool))
    xy = np.stack([t.xy for t in trajs])
    fs = planes.sample(xy)
    return CandidateFeatures(fs.phi.sum(axis=1), fs.occ.sum(axis=1), fs.pred.sum(axis=1), xy, fs.outside.any(axis=1))


def energies(model: CostModel, feats: CandidateFeatures) -> np.ndarray:
    return feats.phi @ model.weights + model.alpha * feats.occ + model.beta * feats.pred


def trajectory_costs(model: CostModel, planes: FeaturePlanes, trajs: Sequence[Trajectory]) -> np.ndarray:
    return energies(model, candidate_features(planes, trajs))


def diff_metric(gt: Trajectory, cand: Trajectory, planes: FeaturePlanes) -> float:
    """Sum of per-waypoint distances plus occupancy and prediction-grid costs along ``cand``."""
    if gt.waypoints.shape != cand.waypoints.shape:
        raise ValueError("trajectories must share the horizon")
    fs = planes.sample(cand.xy)
    return float(np.sum(np.linalg.norm(gt.xy - cand.xy, axis=1)) + np.sum(fs.occ) + np.sum(fs.pred))


def _diffs(gt_xy: np.ndarray, feats: CandidateFeatures) -> np.ndarray:
    return np.linalg.norm(feats.xy - gt_xy, axis=-1).sum(axis=1) + feats.occ + feats.pred


@dataclass(frozen=True, eq=False)
class MarginFrame:
    """Precomputed sums for one training frame."""

    gt: CandidateFeatures     # single row
    cands: CandidateFeatures
    diff: np.ndarray          # (N,)


def margin_frame(planes: FeaturePlanes, gt: Trajectory, candidates: Sequence[Trajectory]) -> MarginFrame:
    if len(candidates) == 0:
        raise ValueError("max-margin loss needs at least one candidate")
    cf = candidate_features(planes, list(candidates))
    return MarginFrame(candidate_features(planes, [gt]), cf, _diffs(gt.xy, cf))


def _frame_loss(w: np.ndarray, alpha: float, beta: float, fr: MarginFrame):
    e_gt = fr.gt.phi[0] @ w + alpha * fr.gt.occ[0] + beta * fr.gt.pred[0]
    e_c = fr.cands.phi @ w + alpha * fr.cands.occ + beta * fr.cands.pred
    vals = e_gt - e_c + fr.diff
    i = int(np.argmax(vals))  # first index on ties
    if vals[i] <= 0:
        return 0.0, np.zeros_like(w), i
    return float(vals[i]), fr.gt.phi[0] - fr.cands.phi[i], i


def max_margin_loss(model: CostModel, planes: FeaturePlanes, gt: Trajectory,
                    candidates: CandidateSet | Sequence[Trajectory]) -> tuple[float, np.ndarray]:
    """Hinge ``max(0, max_c [E(gt) - E(c) + Diff(gt, c)])`` and its
    (sub)gradient with respect to the weights."""
    fr = margin_frame(planes, gt, list(candidates))
    loss, grad, _ = _frame_loss(model.weights, model.alpha, model.beta, fr)
    return loss, grad


@dataclass
class TrainingResult:
    model: CostModel
    trace: list[float]
    steps_accepted: int


def _objective(w, alpha, beta, frames, l2):
    loss, grad = 0.0, np.zeros_like(w)
    for fr in frames:
        lf, gf, _ = _frame_loss(w, alpha, beta, fr)
        loss += lf
        grad += gf
    n = len(frames)
    return loss / n + 0.5 * l2 * float(w @ w), grad / n + l2 * w


def train_cost_model(frames: Sequence[MarginFrame], config: TrainingConfig | None = None,
                     init: CostModel | None = None, max_lr: float = 1.0,
                     callback: Callable[[int, float], None] | None = None) -> TrainingResult:
    """Gradient descent on the mean hinge loss (plus optional L2).

    Step-size backoff: a step that would raise the objective is halved until
    it does not (up to 40 times); accepted steps grow the rate by 1.5, capped
    at ``max_lr``.  The recorded trace is therefore non-increasing.
    """
    cfg = config or TrainingConfig()
    if len(frames) == 0:
        raise ValueError("training needs at least one frame")
    model = init or CostModel()
    w = model.weights.copy()
    alpha, beta = model.alpha, model.beta
    lr = cfg.learning_rate
    obj, grad = _objective(w, alpha, beta, frames, cfg.l2_reg)
    trace = [obj]
    accepted = 0
    for epoch in range(cfg.epochs):
        if not math.isfinite(obj) or obj > 1e6:
            raise TrainingDivergedError(f"loss {obj:.3g} at epoch {epoch}; lr={lr:.3g}", trace, w)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            trace.append(obj)
            continue
        step = grad * min(1.0, cfg.max_step / (lr * gnorm))
        for _ in range(40):
            w_new = w - lr * step
            obj_new, grad_new = _objective(w_new, alpha, beta, frames, cfg.l2_reg)
            if obj_new <= obj:
                break
            lr *= 0.5
        else:
            trace.append(obj)
            continue
        w, obj, grad = w_new, obj_new, grad_new
        accepted += 1
        lr = min(lr * 1.5, max_lr)
        trace.append(obj)
        if callback is not None:
            callback(epoch, obj)
    return TrainingResult(replace(model, weights=w), trace, accepted)


def rank_of_gt(model: CostModel, frame: MarginFrame, tol: float = 1e-9) -> int:
    """Number of candidates strictly cheaper than the ground truth."""
    e_gt = energies(model, frame.gt)[0]
    return int(np.sum(energies(model, frame.cands) < e_gt - tol))
