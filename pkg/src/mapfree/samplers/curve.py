"""Reference-free curve sampler: straight lines, circles and clothoids."""

from __future__ import annotations

import math

import numpy as np

from ..config import SamplerConfig, horizon_times
from ..core import CandidateSet, EgoState, Trajectory
from ..geometry import ClothoidParams, clothoid_point, curvature_from_steering


def speed_profile(v0: float, accel: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Speed and travelled distance under constant acceleration, stopping at v = 0."""
    v = np.maximum(v0 + accel * t, 0.0)
    d = v0 * t + 0.5 * accel * t**2
    if accel < 0:
        t_stop = v0 / -accel
        d = np.where(t >= t_stop, v0 * v0 / (-2.0 * accel), d)
    return v, d


def _arc(ego: EgoState, kappa: float, d: np.ndarray):
    h = ego.heading + kappa * d
    if abs(kappa) < 1e-12:
        x = ego.x + d * math.cos(ego.heading)
        y = ego.y + d * math.sin(ego.heading)
    else:
        x = ego.x + (np.sin(h) - math.sin(ego.heading)) / kappa
        y = ego.y + (math.cos(ego.heading) - np.cos(h)) / kappa
    return x, y, h


def _clothoid(ego: EgoState, scale: float, sign: float, d: np.ndarray):
    # Canonical clothoid from the origin along +x, curving towards +y*sign; the
    # ego sits at xi0 where its curvature equals the ego curvature.
    params = ClothoidParams((0.0, 0.0), (1.0, 0.0), (0.0, sign), scale)
    xi0 = sign * ego.kappa * scale**2 / math.pi
    pts = clothoid_point(params, xi0 + d)
    p0 = clothoid_point(params, np.array([xi0]))[0]
    th0 = sign * math.pi * xi0**2 / (2 * scale**2)
    th = sign * math.pi * (xi0 + d) ** 2 / (2 * scale**2)
    rot = ego.heading - th0
    c, s = math.cos(rot), math.sin(rot)
    rel = pts - p0
    x = ego.x + c * rel[:, 0] - s * rel[:, 1]
    y = ego.y + s * rel[:, 0] + c * rel[:, 1]
    return x, y, th + rot


def curve_sampler(ego: EgoState, config: SamplerConfig | None = None) -> CandidateSet:
    cfg = config or SamplerConfig()
    t = horizon_times()
    origin = (ego.x, ego.y, ego.heading, ego.v)
    out = []
    for a in cfg.straight_accels:
        v, d = speed_profile(ego.v, a, t)
        x, y, h = _arc(ego, 0.0, d)
        maneuver = "stop" if v[-1] == 0 else "lane_keep"
        out.append(Trajectory.from_arrays(x, y, h, v, maneuver, "curve", origin, label=f"straight a={a:g}"))
    for phi in cfg.circle_steering:
        kappa = curvature_from_steering(phi, ego.wheelbase)
        for a in cfg.circle_accels:
            v, d = speed_profile(ego.v, a, t)
            x, y, h = _arc(ego, kappa, d)
            out.append(Trajectory.from_arrays(x, y, h, v, "turn", "curve", origin,
                                              label=f"circle phi={phi:g} a={a:g}"))
    for scale in cfg.clothoid_scales:
        for sign in (1.0, -1.0):
            for a in cfg.clothoid_accels:
                v, d = speed_profile(ego.v, a, t)
                x, y, h = _clothoid(ego, scale, sign, d)
                out.append(Trajectory.from_arrays(x, y, h, v, "turn", "curve", origin,
                                                  label=f"clothoid a={scale:g} dir={sign:+g} acc={a:g}"))
    warning = "" if out else "curve sampler: empty sweep configuration"
    return CandidateSet(out, warning)
