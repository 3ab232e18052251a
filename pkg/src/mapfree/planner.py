"""Candidate ranking, the rule-based safety layer and the multi-modal
imitation loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .config import LimitsConfig, SafetyConfig, horizon_times
from .core import SOURCES, CandidateSet, EgoState, Trajectory
from .evaluator import CostModel, FeaturePlanes, candidate_features, energies
from .geometry import box_corners, convex_overlap, points_in_box
from .prediction import AgentForecast
from .raster import GridGeometry
from .samplers.curve import speed_profile
from .samplers.kinematics import violates


class EmptyCandidateSetError(ValueError):
    pass


@dataclass(eq=False)
class PlannerDecision:
    ranked: CandidateSet
    costs: np.ndarray                  # E per ranked candidate, ascending
    terms: np.ndarray                  # (N, 3): volume, alpha*O, beta*G
    chosen: Trajectory | None = None
    chosen_index: int | None = None    # into ``ranked``; None for the fallback
    verdicts: list[str | None] = field(default_factory=list)  # None = not checked
    reserved: list[int] = field(default_factory=list)
    consistency: float = 0.0
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "chosen": None if self.chosen is None else self.chosen.to_dict(),
            "chosen_index": self.chosen_index,
            "fallback": self.fallback,
            "consistency": self.consistency,
            "reserved": list(self.reserved),
            "candidates": [
                {"label": c.label, "source": c.source, "maneuver": c.maneuver, "cost": float(e),
                 "terms": [float(x) for x in t], "verdict": v}
                for c, e, t, v in zip(self.ranked, self.costs, self.terms, self.verdicts)
            ],
        }


def select_best(candidates: CandidateSet | Sequence[Trajectory], model: CostModel,
                planes: FeaturePlanes) -> PlannerDecision:
    """Rank by E ascending; ties go to the earlier source in ``SOURCES``, then input order."""
    cands = list(candidates)
    if not cands:
        raise EmptyCandidateSetError("cannot select from an empty candidate set")
    feats = candidate_features(planes, cands)
    e = energies(model, feats)
    src = np.array([SOURCES.index(c.source) for c in cands])
    order = np.lexsort((np.arange(len(cands)), src, e))
    terms = np.column_stack([feats.phi @ model.weights, model.alpha * feats.occ, model.beta * feats.pred])
    ranked = CandidateSet([cands[i] for i in order], getattr(candidates, "warning", ""))
    return PlannerDecision(ranked, e[order], terms[order], ranked[0], 0, [None] * len(cands))


def multimodal_imitation_loss(modes: Sequence[Trajectory], gt: Trajectory) -> tuple[float, int]:
    """Smallest mean per-waypoint distance between a mode and the ground truth."""
    if len(modes) == 0:
        raise ValueError("need at least one mode")
    d = [float(np.mean(np.linalg.norm(m.xy - gt.xy, axis=1))) for m in modes]
    i = int(np.argmin(d))
    return d[i], i


# -- safety checks ---------------------------------------------------------------------

class StaticChecker:
    """Ego box (inflated by ``margin``) against occupied cell centres."""

    def __init__(self, geometry: GridGeometry, mask: np.ndarray, margin: float):
        rows, cols = np.nonzero(mask)
        self.points = geometry.cell_to_world(rows, cols).reshape(-1, 2)
        self.tree = cKDTree(self.points) if len(self.points) else None
        self.margin = margin

    def poses(self, traj: Trajectory) -> np.ndarray:
        """Waypoints plus the start pose and segment midpoints."""
        p = np.column_stack([traj.xy, traj.heading])
        if traj.origin is not None:
            p = np.vstack([traj.origin[:3], p])
        mid = 0.5 * (p[1:] + p[:-1])
        mid[:, 2] = p[:-1, 2] + 0.5 * np.angle(np.exp(1j * (p[1:, 2] - p[:-1, 2])))
        return np.vstack([p, mid])

    def collides(self, traj: Trajectory, length: float, width: float) -> bool:
        if self.tree is None:
            return False
        L, W = length + 2 * self.margin, width + 2 * self.margin
        radius = 0.5 * math.hypot(L, W)
        for x, y, h in self.poses(traj):
            idx = self.tree.query_ball_point((x, y), radius)
            if idx and points_in_box(self.points[idx], x, y, h, L, W).any():
                return True
        return False


def dynamic_collision(traj: Trajectory, forecasts: Sequence[AgentForecast], length: float, width: float,
                      lon_margin: float, lat_margin: float) -> str | None:
    """Id of the first forecast agent whose box overlaps the inflated ego box
    at a matching step."""
    ego_boxes = box_corners(traj.xy[:, 0], traj.xy[:, 1], traj.heading, length + 2 * lon_margin,
                            width + 2 * lat_margin)
    reach_e = 0.5 * math.hypot(length + 2 * lon_margin, width + 2 * lat_margin)
    for f in forecasts:
        fx = f.trajectory.xy
        reach = reach_e + 0.5 * math.hypot(f.length, f.width)
        near = np.flatnonzero(np.linalg.norm(fx - traj.xy, axis=1) < reach)
        if len(near) == 0:
            continue
        boxes = box_corners(fx[near, 0], fx[near, 1], f.trajectory.heading[near], f.length, f.width)
        for j, k in enumerate(near):
            if convex_overlap(ego_boxes[k], boxes[j]):
                return f.agent_id
    return None


def plan_deviation(traj: Trajectory, previous: Trajectory | None) -> float:
    """Mean distance between overlapping waypoints of this plan and the
    previous one shifted by one step."""
    if previous is None:
        return 0.0
    return float(np.mean(np.linalg.norm(traj.xy[:-1] - previous.xy[1:], axis=1)))


def fallback_trajectory(ego: EgoState, decel: float = 4.0) -> Trajectory:
    """Straight-line comfort braking from the ego pose."""
    t = horizon_times()
    v, d = speed_profile(ego.v, -abs(decel), t)
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return Trajectory.from_arrays(ego.x + d * c, ego.y + d * s, np.full_like(t, ego.heading), v,
                                  "stop", "curve", (ego.x, ego.y, ego.heading, ego.v), label="fallback")


def safety_layer(decision: PlannerDecision, ego: EgoState, static: StaticChecker | None,
                 forecasts: Sequence[AgentForecast] = (), previous: Trajectory | None = None,
                 config: SafetyConfig | None = None, limits: LimitsConfig | None = None,
                 ego_size: tuple[float, float] = (4.8, 1.9)) -> PlannerDecision:
    """Validate candidates in cost order until ``n_reserved`` pass, then pick
    the one minimising cost + weight * deviation from the previous plan.
    Falls back to straight braking when none passes."""
    cfg = config or SafetyConfig()
    limits = limits or LimitsConfig()
    length, width = ego_size
    verdicts: list[str | None] = [None] * len(decision.ranked)
    reserved: list[int] = []
    for i, cand in enumerate(decision.ranked):
        if static is not None and static.collides(cand, length, width):
            verdicts[i] = "static"
            continue
        hit = dynamic_collision(cand, forecasts, length, width, cfg.longitudinal_margin, cfg.lateral_margin)
        if hit is not None:
            verdicts[i] = f"agent:{hit}"
            continue
        bad = violates(cand, limits)
        if bad is not None:
            verdicts[i] = f"kinematics:{bad}"
            continue
        verdicts[i] = "ok"
        reserved.append(i)
        if len(reserved) >= cfg.n_reserved:
            break
    decision.verdicts = verdicts
    decision.reserved = reserved
    if not reserved:
        decision.chosen = fallback_trajectory(ego, cfg.fallback_decel)
        decision.chosen_index = None
        decision.fallback = True
        decision.consistency = plan_deviation(decision.chosen, previous)
        return decision
    scores = [decision.costs[i] + cfg.consistency_weight * plan_deviation(decision.ranked[i], previous)
              for i in reserved]
    best = reserved[int(np.argmin(scores))]
    decision.chosen = decision.ranked[best]
    decision.chosen_index = best
    decision.fallback = False
    decision.consistency = plan_deviation(decision.chosen, previous)
    return decision
