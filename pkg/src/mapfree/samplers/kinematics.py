"""Finite-difference kinematic estimates and the feasibility filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DT, LimitsConfig
from ..core import CandidateSet, Trajectory
from ..geometry import wrap_angle


@dataclass(frozen=True)
class Kinematics:
    accel: np.ndarray
    jerk: np.ndarray
    curvature: np.ndarray
    lat_accel: np.ndarray


def _stacked(traj: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    wp = traj.waypoints
    if traj.origin is not None:
        xy = np.vstack([traj.origin[:2], wp[:, 1:3]])
        heading = np.concatenate([[traj.origin[2]], wp[:, 3]])
        v = np.concatenate([[traj.origin[3]], wp[:, 4]])
    else:
        xy, heading, v = wp[:, 1:3], wp[:, 3], wp[:, 4]
    return xy, heading, v


def _kinematics(xy: np.ndarray, heading: np.ndarray, v: np.ndarray, dt: float) -> Kinematics:
    # works on (T, ...) or batched (N, T, ...) arrays along the time axis
    accel = np.diff(v, axis=-1) / dt
    jerk = np.diff(accel, axis=-1) / dt
    ds = np.linalg.norm(np.diff(xy, axis=-2), axis=-1)
    dtheta = wrap_angle(np.diff(heading, axis=-1))
    moving = ds > 1e-3
    curvature = np.where(moving, dtheta / np.where(moving, ds, 1.0), 0.0)
    v_mid = 0.5 * (v[..., 1:] + v[..., :-1])
    return Kinematics(accel, jerk, curvature, v_mid**2 * curvature)


def estimate_kinematics(traj: Trajectory, dt: float = DT) -> Kinematics:
    """Accelerations, jerks, curvatures and lateral accelerations by finite
    differences over the waypoint sequence (prefixed by the origin pose when
    the trajectory has one).  Curvature is taken as zero over segments
    shorter than 1 mm, where heading change is meaningless."""
    return _kinematics(*_stacked(traj), dt)


_CHECKS = ("accel", "curvature", "jerk", "lat_accel")


def _first_violation(k: Kinematics, limits: LimitsConfig) -> np.ndarray:
    """Index into ``_CHECKS`` of the first violated limit per row, -1 if none."""
    out = np.full(k.accel.shape[:-1], -1)
    for i in reversed(range(len(_CHECKS))):
        name = _CHECKS[i]
        bad = np.any(np.abs(getattr(k, name)) > getattr(limits, "max_" + name), axis=-1)
        out = np.where(bad, i, out)
    return out


def violates(traj: Trajectory, limits: LimitsConfig) -> str | None:
    """Name of the first violated limit, or None."""
    i = int(_first_violation(estimate_kinematics(traj), limits))
    return None if i < 0 else _CHECKS[i]


def violations(trajs: list[Trajectory], limits: LimitsConfig) -> list[str | None]:
    """Batched ``violates``; trajectories are grouped by stacked length."""
    out: list[str | None] = [None] * len(trajs)
    groups: dict[int, list[int]] = {}
    stacked = [_stacked(t) for t in trajs]
    for i, (xy, _, _) in enumerate(stacked):
        groups.setdefault(len(xy), []).append(i)
    for idx in groups.values():
        xy = np.stack([stacked[i][0] for i in idx])
        h = np.stack([stacked[i][1] for i in idx])
        v = np.stack([stacked[i][2] for i in idx])
        codes = _first_violation(_kinematics(xy, h, v, DT), limits)
        for i, c in zip(idx, codes):
            out[i] = None if c < 0 else _CHECKS[c]
    return out


def kinematic_filter(candidates: CandidateSet, limits: LimitsConfig | None = None) -> CandidateSet:
    limits = limits or LimitsConfig()
    for name in _CHECKS:
        if not getattr(limits, "max_" + name) > 0:
            raise ValueError(f"max_{name} must be positive")
    cands = list(candidates)
    kept = [c for c, bad in zip(cands, violations(cands, limits)) if bad is None]
    return CandidateSet(kept, candidates.warning)
