"""Frenet lattice sampler: longitudinal quartic/quintic profiles combined
with lateral quintic offsets along a reference line."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import LANE_WIDTH, LimitsConfig, SamplerConfig, horizon_times
from ..core import CandidateSet, EgoState, Trajectory
from ..geometry import FrenetState, ReferenceLine, fit_quartic, fit_quintic, frenet_state_of
from .kinematics import kinematic_filter
from .stgraph import StGraph

REVERSE_TOL = 0.05
MIN_LATERAL_DISTANCE = 8.0


@dataclass(frozen=True)
class LongProfile:
    s: np.ndarray
    s_dot: np.ndarray
    kind: str  # cruise | stop | follow | overtake
    label: str


def _hold(poly, t: np.ndarray, t1: float, s_end: float | None = None, v_end: float | None = None):
    s = poly(np.minimum(t, t1))
    v = poly(np.minimum(t, t1), 1)
    after = t > t1
    if np.any(after):
        v_hold = float(poly(t1, 1)) if v_end is None else v_end
        s = np.where(after, float(poly(t1)) + v_hold * (t - t1), s)
        v = np.where(after, v_hold, v)
    return s, v


def longitudinal_profiles(fs: FrenetState, target_speed: float, cfg: SamplerConfig,
                          graph: StGraph | None = None, stop_s: float | None = None) -> list[LongProfile]:
    t = horizon_times()
    s0, v0, a0 = fs.s, max(fs.s_dot, 0.0), fs.s_ddot
    out: list[LongProfile] = []

    def keep(s, v, kind, label, check_graph=False):
        if np.any(v < -REVERSE_TOL) or np.any(np.diff(np.concatenate([[s0], s])) < -REVERSE_TOL * 0.1):
            return
        if check_graph and graph is not None and graph.collides(s):
            return
        out.append(LongProfile(s, np.maximum(v, 0.0), kind, label))

    for off in cfg.cruise_speed_offsets:
        v1 = max(target_speed + off, 0.0)
        for T in cfg.cruise_times:
            s, v = _hold(fit_quartic(s0, v0, a0, v1, 0.0, T), t, T)
            keep(s, v, "cruise" if v1 > 0 else "stop", f"cruise v={v1:g} T={T:g}")
    for d in cfg.stop_decels:
        T = max(1.5 * v0 / d, 0.5)
        s, v = _hold(fit_quartic(s0, v0, a0, 0.0, 0.0, T), t, T, v_end=0.0)
        keep(s, v, "stop", f"brake d={d:g}")
    targets = []
    if stop_s is not None:
        targets.append(stop_s)
    if graph is not None:
        ahead = [float(b.lower[0]) for b in graph.bands if b.static and b.upper[0] >= s0]
        if ahead:
            targets.append(min(ahead))
    for s_stop in targets:
        if s_stop <= s0:
            continue
        for T in cfg.stop_times:
            s, v = _hold(fit_quintic((s0, v0, a0), (s_stop, 0.0, 0.0), T), t, T, v_end=0.0)
            if np.any(s > s_stop + REVERSE_TOL):
                continue
            keep(s, v, "stop", f"stop s={s_stop:.1f} T={T:g}")
    if graph is not None:
        for b in graph.bands:
            if b.static:
                continue
            p = b.present()
            vb = max(b.speed, 0.0)
            for T in cfg.follow_times:
                k = int(round(T / 0.1)) - 1
                if k < len(t):
                    if not p[k]:
                        continue
                    lower, upper = b.lower[k], b.upper[k]
                else:
                    # beyond the horizon: extrapolate the band at the obstacle speed
                    if not p[-1]:
                        continue
                    lower = b.lower[-1] + vb * (T - t[-1])
                    upper = b.upper[-1] + vb * (T - t[-1])
                for gap in cfg.follow_gaps:
                    s_end = lower - gap
                    if s_end > s0:
                        s, v = _hold(fit_quintic((s0, v0, a0), (s_end, vb, 0.0), T), t, T, v_end=vb)
                        keep(s, v, "follow", f"follow {b.obstacle_id} T={T:g} gap={gap:g}", True)
                    s_end = upper + gap
                    vo = max(vb, v0)
                    s, v = _hold(fit_quintic((s0, v0, a0), (s_end, vo, 0.0), T), t, T, v_end=vo)
                    keep(s, v, "overtake", f"overtake {b.obstacle_id} T={T:g} gap={gap:g}", True)
    return out


def lattice_sampler(ego: EgoState, ref: ReferenceLine, target_speed: float,
                    config: SamplerConfig | None = None, graph: StGraph | None = None,
                    stop_s: float | None = None, limits: LimitsConfig | None = None,
                    filter_kinematics: bool = True) -> CandidateSet:
    """Lattice candidates along ``ref``; infeasible ones are dropped when
    ``filter_kinematics`` is set, as are any that run past the reference end."""
    cfg = config or SamplerConfig()
    if not target_speed >= 0:
        raise ValueError("target speed must be non-negative")
    fs = frenet_state_of(ego, ref)
    longs = longitudinal_profiles(fs, target_speed, cfg, graph, stop_s)
    if not longs:
        return CandidateSet([], "lattice: no longitudinal profile")
    lat_targets = []
    for l1 in cfg.lateral_offsets:
        times = cfg.lateral_times if abs(l1 - fs.l) > 1e-6 or fs.l_prime != 0 else cfg.lateral_times[:1]
        for T in times:
            lat_targets.append((l1, T))
    v_ref = max(fs.s_dot, 1.0)
    longs = [lp for lp in longs if lp.s[-1] <= ref.length and lp.s[0] >= 0]
    if not longs:
        return CandidateSet([], "lattice: every profile runs past the reference end")
    S = np.stack([lp.s for lp in longs])            # (nl, 30)
    SD = np.stack([lp.s_dot for lp in longs])
    ds = S - fs.s
    nl, nt = len(longs), len(lat_targets)
    L = np.empty((nl, nt, S.shape[1]))
    LP = np.empty_like(L)
    for j, (l1, T) in enumerate(lat_targets):
        span = max(MIN_LATERAL_DISTANCE, v_ref * T)
        q = fit_quintic((fs.l, fs.l_prime, fs.l_pprime), (l1, 0.0, 0.0), span)
        dsc = np.minimum(ds, span)
        L[:, j] = q(dsc)
        LP[:, j] = np.where(ds < span, q(dsc, 1), 0.0)
    # the reference frame depends on s only, so evaluate it once per profile
    P, TAN, NRM, KAP = (a[:, None] for a in ref.frame(S))
    X = P[..., 0] + L * NRM[..., 0]
    Y = P[..., 1] + L * NRM[..., 1]
    one_minus = 1.0 - KAP * L
    H = np.arctan2(TAN[..., 1], TAN[..., 0]) + np.arctan2(LP, one_minus)
    V = SD[:, None, :] * np.sqrt(one_minus**2 + LP**2)
    origin = (ego.x, ego.y, ego.heading, ego.v)
    out = []
    for i, lp in enumerate(longs):
        for j, (l1, T) in enumerate(lat_targets):
            if abs(l1) >= 0.5 * LANE_WIDTH:
                maneuver = "lane_change_left" if l1 > 0 else "lane_change_right"
            else:
                maneuver = {"cruise": "lane_keep"}.get(lp.kind, lp.kind)
            out.append(Trajectory.from_arrays(X[i, j], Y[i, j], H[i, j], V[i, j], maneuver, "lattice", origin,
                                              label=f"{lp.label} l={l1:g} Tl={T:g}"))
    cs = CandidateSet(out, "" if out else "lattice: every profile runs past the reference end")
    if filter_kinematics:
        cs = kinematic_filter(cs, limits)
    return cs
