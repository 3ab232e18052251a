"""Frenet frames, polynomial profiles, clothoids and small planar helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .core import EgoState, Trajectory

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


# -- Fresnel integrals and clothoids -------------------------------------------

def _fresnel_series(x: float) -> tuple[float, float]:
    # Converges fast for |x| < 0.5: (pi/2 x^2)^n / n! shrinks below 1e-17 by n=8.
    z = 0.5 * math.pi * x * x
    c = s = 0.0
    term = x  # x * z^n / n!
    for n in range(12):
        if n % 2 == 0:
            c += (-1) ** (n // 2) * term / (2 * n + 1)
        else:
            s += (-1) ** (n // 2) * term / (2 * n + 1)
        term *= z / (n + 1)
    return c, s


def _fresnel_asymptotic(x: float) -> tuple[float, float]:
    z = math.pi * x * x
    f = (1 - 3 / z**2 + 105 / z**4) / (math.pi * x)
    g = (1 - 15 / z**2 + 945 / z**4) / (math.pi**2 * x**3)
    ph = 0.5 * z
    return 0.5 + f * math.sin(ph) - g * math.cos(ph), 0.5 - f * math.cos(ph) - g * math.sin(ph)


def _fresnel_quadrature(x: float) -> tuple[float, float]:
    # Panels end at sqrt(k), so each spans a phase change of at most pi/2.
    edges = np.sqrt(np.arange(0, math.floor(x * x) + 1, dtype=float))
    if edges[-1] < x:
        edges = np.append(edges, x)
    a, b = edges[:-1, None], edges[1:, None]
    u = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X[None, :]
    w = 0.5 * (b - a) * _GL_W[None, :]
    ph = 0.5 * math.pi * u * u
    return float(np.sum(w * np.cos(ph))), float(np.sum(w * np.sin(ph)))


def fresnel(xi):
    """Fresnel integrals ``C(xi), S(xi)`` with the pi*u^2/2 normalisation.

    Scalars in, scalars out; arrays in, arrays out.
    """
    arr = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("fresnel argument must be finite")
    flat = arr.ravel()
    c = np.empty_like(flat)
    s = np.empty_like(flat)
    for i, v in enumerate(flat):
        ax = abs(v)
        if ax < 0.5:
            ci, si = _fresnel_series(ax)
        elif ax > 40.0:
            ci, si = _fresnel_asymptotic(ax)
        else:
            ci, si = _fresnel_quadrature(ax)
        sign = -1.0 if v < 0 else 1.0
        c[i], s[i] = sign * ci, sign * si
    if arr.ndim == 0:
        return float(c[0]), float(s[0])
    return c.reshape(arr.shape), s.reshape(arr.shape)


@dataclass(frozen=True)
class ClothoidParams:
    start: tuple[float, float]
    tangent: tuple[float, float]
    normal: tuple[float, float]
    scale: float

    def validate(self) -> None:
        t = np.asarray(self.tangent, float)
        n = np.asarray(self.normal, float)
        if abs(np.linalg.norm(t) - 1) > 1e-9 or abs(np.linalg.norm(n) - 1) > 1e-9:
            raise ValueError("clothoid tangent and normal must be unit vectors")
        if abs(t @ n) > 1e-9:
            raise ValueError("clothoid tangent and normal must be perpendicular")
        if not self.scale > 0:
            raise ValueError("clothoid scale must be > 0")


def clothoid_point(params: ClothoidParams, xi):
    """Point(s) ``s0 + a [C(xi/a) T0 + S(xi/a) N0]`` at arc length ``xi``.

    Curvature along the curve is ``pi * xi / a**2``, signed towards ``N0``.
    """
    params.validate()
    c, s = fresnel(np.asarray(xi, float) / params.scale)
    c = np.asarray(c)[..., None]
    s = np.asarray(s)[..., None]
    p = (np.asarray(params.start, float)
         + params.scale * (c * np.asarray(params.tangent, float) + s * np.asarray(params.normal, float)))
    return p


def curvature_from_steering(phi: float, wheelbase: float) -> float:
    """Path curvature of the bicycle model, ``2 tan(phi) / L``."""
    if not wheelbase > 0:
        raise ValueError("wheelbase must be > 0")
    if not abs(phi) < math.pi / 2:
        raise ValueError("|steering| must be < pi/2")
    return 2.0 * math.tan(phi) / wheelbase


def steering_from_curvature(kappa: float, wheelbase: float) -> float:
    return math.atan(0.5 * kappa * wheelbase)


# -- polynomial profiles -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolynomialProfile:
    """Polynomial on ``[0, t1]`` stored in normalised time ``tau = t / t1``.

    Evaluating past ``t1`` extrapolates the polynomial; callers that need a
    hold behaviour handle it themselves.
    """

    norm_coeffs: np.ndarray
    t1: float

    @property
    def degree(self) -> int:
        return len(self.norm_coeffs) - 1

    @property
    def coefficients(self) -> np.ndarray:
        """Ascending coefficients in raw time ``t``."""
        k = np.arange(len(self.norm_coeffs))
        return self.norm_coeffs / self.t1**k

    def __call__(self, t, order: int = 0):
        t = np.asarray(t, float)
        tau = t / self.t1
        d = np.asarray(self.norm_coeffs, float)
        for _ in range(order):
            d = d[1:] * np.arange(1, len(d))
        out = np.zeros_like(tau)
        for c in d[::-1]:
            out = out * tau + c
        return out / self.t1**order


def _boundary_rows(degree: int, tau: float, order: int) -> np.ndarray:
    k = np.arange(degree + 1, dtype=float)
    fall = np.ones_like(k)
    for j in range(order):
        fall = fall * (k - j)
    powers = np.where(k - order >= 0, tau ** np.clip(k - order, 0, None), 0.0)
    return fall * powers


def _fit(start: tuple[float, ...], end: tuple[float | None, ...], t1: float, degree: int) -> PolynomialProfile:
    if not t1 > 0:
        raise ValueError("t1 must be > 0")
    rows, rhs = [], []
    for order, val in enumerate(start):
        rows.append(_boundary_rows(degree, 0.0, order))
        rhs.append(val * t1**order)
    for order, val in enumerate(end):
        if val is None:
            continue
        rows.append(_boundary_rows(degree, 1.0, order))
        rhs.append(val * t1**order)
    coeffs = np.linalg.solve(np.array(rows), np.array(rhs, float))
    return PolynomialProfile(coeffs, float(t1))


def fit_quartic(s0: float, v0: float, a0: float, v1: float, a1: float, t1: float) -> PolynomialProfile:
    """Quartic with start ``(s0, v0, a0)`` and end ``(v1, a1)``; end position free."""
    return _fit((s0, v0, a0), (None, v1, a1), t1, 4)


def fit_quintic(start: tuple[float, float, float], end: tuple[float, float, float], t1: float) -> PolynomialProfile:
    """Quintic matching position, first and second derivative at both ends."""
    return _fit(tuple(start), tuple(end), t1, 5)


# -- reference line and Frenet frame ---------------------------------------------

@dataclass(frozen=True)
class FrenetState:
    s: float
    l: float
    s_dot: float = 0.0
    s_ddot: float = 0.0
    l_prime: float = 0.0
    l_pprime: float = 0.0


class ReferenceLine:
    """Arc-length parameterised guidance curve through a polyline.

    The polyline vertices are joined by a natural cubic spline so the
    tangent and normal vary continuously; ``arc_length`` gives the
    cumulative arc length at each input point.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("reference line needs an (n >= 2, 2) point array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("reference line points must be finite")
        chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chord < 1e-6):
            raise ValueError("reference line has (near-)duplicate consecutive points")
        self.points = pts
        self._knots = np.concatenate([[0.0], np.cumsum(chord)])
        self._spline = CubicSpline(self._knots, pts, bc_type="natural")
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)
        seg = self._integrate_speed(self._knots[:-1], self._knots[1:])
        self.arc_length = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.arc_length[-1])
        per = 8
        frac = np.arange(per) / per
        seed_u = (self._knots[:-1, None] + frac[None, :] * np.diff(self._knots)[:, None]).ravel()
        self._seed_u = np.append(seed_u, self._knots[-1])
        self._seed_xy = self._spline(self._seed_u)
        self._seed_gap = float(np.max(np.linalg.norm(np.diff(self._seed_xy, axis=0), axis=1)))

    # parameter <-> arc length
    def _speed(self, u):
        return np.linalg.norm(self._d1(u), axis=-1)

    def _integrate_speed(self, ua, ub):
        ua = np.asarray(ua, float)[..., None]
        ub = np.asarray(ub, float)[..., None]
        u = 0.5 * (ua + ub) + 0.5 * (ub - ua) * _GL_X
        return np.sum(_GL_W * self._speed(u), axis=-1) * 0.5 * (ub[..., 0] - ua[..., 0])

    def _interval(self, u):
        return np.clip(np.searchsorted(self._knots, u, side="right") - 1, 0, len(self._knots) - 2)

    def _s_of_u(self, u):
        u = np.asarray(u, float)
        i = self._interval(u)
        return self.arc_length[i] + self._integrate_speed(self._knots[i], u)

    def _u_of_s(self, s):
        s = np.asarray(s, float)
        u = np.interp(s, self.arc_length, self._knots)
        for _ in range(8):
            u = u - (self._s_of_u(u) - s) / self._speed(u)
            u = np.clip(u, 0.0, self._knots[-1])
        return u

    def _check_range(self, s):
        s = np.asarray(s, float)
        if np.any(s < -1e-9) or np.any(s > self.length + 1e-9):
            raise ValueError(f"arc length outside [0, {self.length:.3f}]")
        return np.clip(s, 0.0, self.length)

    # geometry at arc length
    def frame(self, s):
        """Position, unit tangent, unit left normal and curvature at ``s``."""
        u = self._u_of_s(self._check_range(s))
        p = self._spline(u)
        d1 = self._d1(u)
        d2 = self._d2(u)
        speed = np.linalg.norm(d1, axis=-1)
        tangent = d1 / speed[..., None]
        normal = np.stack([-tangent[..., 1], tangent[..., 0]], axis=-1)
        kappa = (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]) / speed**3
        return p, tangent, normal, kappa

    def position(self, s):
        return self.frame(s)[0]

    def heading(self, s):
        t = self.frame(s)[1]
        return np.arctan2(t[..., 1], t[..., 0])

    def curvature(self, s):
        return self.frame(s)[3]

    def extended_position(self, s):
        """Like :meth:`position` but continues straight past either end."""
        s = np.asarray(s, float)
        inside = np.clip(s, 0.0, self.length)
        p, t, _, _ = self.frame(inside)
        return p + (s - inside)[..., None] * t

    # projection
    def _refine(self, pts, u0, lo, hi):
        u = u0.copy()
        for _ in range(30):
            c = self._spline(u)
            d1 = self._d1(u)
            d2 = self._d2(u)
            diff = c - pts
            f = np.sum(diff * d1, axis=-1)
            fp = np.sum(d1 * d1, axis=-1) + np.sum(diff * d2, axis=-1)
            fp = np.where(fp > 1e-12, fp, 1e-12)
            step = f / fp
            u = np.clip(u - step, lo, hi)
            if np.all(np.abs(step) < 1e-13):
                break
        return u

    def project(self, points):
        """Arc length and signed lateral offset (left positive) of points."""
        pts = np.atleast_2d(np.asarray(points, float))
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        d = np.linalg.norm(pts[:, None, :] - self._seed_xy[None, :, :], axis=-1)
        best = np.argmin(d, axis=1)
        n = len(self._seed_u)
        u_best = self._polish(pts, best)
        dist_best = np.linalg.norm(self._spline(u_best) - pts, axis=-1)
        # Points where a second branch of the curve is nearly as close.
        dmin = d[np.arange(len(pts)), best]
        for i in np.nonzero(np.sum(d <= (dmin + self._seed_gap)[:, None], axis=1) > 3)[0]:
            di = d[i]
            cand = [j for j in range(n)
                    if di[j] <= dmin[i] + self._seed_gap
                    and (j == 0 or di[j] <= di[j - 1]) and (j == n - 1 or di[j] <= di[j + 1])]
            for j in cand:
                uj = self._polish(pts[i:i + 1], np.array([j]))[0]
                dj = float(np.linalg.norm(self._spline(uj) - pts[i]))
                if dj < dist_best[i] - 1e-12 or (abs(dj - dist_best[i]) <= 1e-12 and uj < u_best[i]):
                    u_best[i], dist_best[i] = uj, dj
        s = self._s_of_u(u_best)
        c = self._spline(u_best)
        tangent = self._d1(u_best)
        tangent = tangent / np.linalg.norm(tangent, axis=-1)[:, None]
        rel = pts - c
        l = tangent[:, 0] * rel[:, 1] - tangent[:, 1] * rel[:, 0]
        return s, l

    def _polish(self, pts, seed_idx):
        n = len(self._seed_u)
        lo = self._seed_u[np.clip(seed_idx - 1, 0, n - 1)]
        hi = self._seed_u[np.clip(seed_idx + 1, 0, n - 1)]
        return self._refine(pts, self._seed_u[seed_idx], lo, hi)

    def to_cartesian(self, s, l, l_prime=0.0, s_dot=None):
        """Vectorised Frenet -> Cartesian: returns x, y, heading, speed."""
        s = np.asarray(s, float)
        l = np.asarray(l, float)
        l_prime = np.broadcast_to(np.asarray(l_prime, float), s.shape)
        p, t, n, kappa = self.frame(s)
        xy = p + l[..., None] * n
        one_minus = 1.0 - kappa * l
        heading = np.arctan2(t[..., 1], t[..., 0]) + np.arctan2(l_prime, one_minus)
        if s_dot is None:
            speed = np.zeros_like(s)
        else:
            speed = np.asarray(s_dot, float) * np.sqrt(one_minus**2 + l_prime**2)
        return xy[..., 0], xy[..., 1], heading, speed


def project_to_frenet(point, ref: ReferenceLine) -> FrenetState:
    s, l = ref.project(np.asarray(point, float)[None, :])
    return FrenetState(float(s[0]), float(l[0]))


def frenet_to_cartesian(fs: FrenetState, ref: ReferenceLine) -> tuple[float, float, float, float]:
    x, y, h, v = ref.to_cartesian(np.array([fs.s]), np.array([fs.l]), np.array([fs.l_prime]),
                                  np.array([fs.s_dot]))
    return float(x[0]), float(y[0]), float(h[0]), float(v[0])


def frenet_state_of(ego: EgoState, ref: ReferenceLine) -> FrenetState:
    """Full Frenet state of the ego relative to ``ref``."""
    s, l = ref.project(np.array([[ego.x, ego.y]]))
    s, l = float(s[0]), float(l[0])
    _, t, _, kappa = ref.frame(s)
    dtheta = float(wrap_angle(ego.heading - math.atan2(t[1], t[0])))
    one_minus = 1.0 - float(kappa) * l
    l_prime = one_minus * math.tan(dtheta)
    s_dot = ego.v * math.cos(dtheta) / one_minus
    return FrenetState(s, l, s_dot, ego.a * math.cos(dtheta), l_prime, 0.0)


# -- frames and boxes -----------------------------------------------------------

def _rotate(xy, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.column_stack([c * xy[:, 0] - s * xy[:, 1], s * xy[:, 0] + c * xy[:, 1]])


def to_fixed_oriented(traj: Trajectory, ego: EgoState) -> Trajectory:
    """Express ``traj`` in the ego frame rotated by the ego heading."""
    wp = traj.waypoints.copy()
    wp[:, 1:3] = _rotate(wp[:, 1:3] - [ego.x, ego.y], -ego.heading)
    wp[:, 3] = wp[:, 3] - ego.heading
    origin = None
    if traj.origin is not None:
        origin = traj.origin.copy()
        origin[:2] = _rotate(origin[None, :2] - [ego.x, ego.y], -ego.heading)[0]
        origin[2] -= ego.heading
    return Trajectory(wp, traj.maneuver, traj.source, origin, traj.label)


def from_fixed_oriented(traj: Trajectory, ego: EgoState) -> Trajectory:
    wp = traj.waypoints.copy()
    wp[:, 1:3] = _rotate(wp[:, 1:3], ego.heading) + [ego.x, ego.y]
    wp[:, 3] = wp[:, 3] + ego.heading
    origin = None
    if traj.origin is not None:
        origin = traj.origin.copy()
        origin[:2] = _rotate(origin[None, :2], ego.heading)[0] + [ego.x, ego.y]
        origin[2] += ego.heading
    return Trajectory(wp, traj.maneuver, traj.source, origin, traj.label)


def box_corners(x, y, heading, length, width):
    """Corners of oriented boxes, counter-clockwise; shape ``(..., 4, 2)``."""
    x, y, heading = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(heading, float))
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    cx = x[..., None] + c[..., None] * local[:, 0] - s[..., None] * local[:, 1]
    cy = y[..., None] + s[..., None] * local[:, 0] + c[..., None] * local[:, 1]
    return np.stack([cx, cy], axis=-1)


def convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons (touching is not overlap)."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.column_stack([-edges[:, 1], edges[:, 0]])
        pa = a @ normals.T
        pb = b @ normals.T
        if np.any((pa.max(axis=0) <= pb.min(axis=0)) | (pb.max(axis=0) <= pa.min(axis=0))):
            return False
    return True


def points_in_box(points, x, y, heading, length, width) -> np.ndarray:
    rel = np.asarray(points, float) - [x, y]
    c, s = math.cos(heading), math.sin(heading)
    lon = rel[:, 0] * c + rel[:, 1] * s
    lat = -rel[:, 0] * s + rel[:, 1] * c
    return (np.abs(lon) <= 0.5 * length) & (np.abs(lat) <= 0.5 * width)


def three_point_curvature(p0, p1, p2) -> float:
    """Signed curvature of the circle through three points (0 if collinear)."""
    p0, p1, p2 = (np.asarray(p, float) for p in (p0, p1, p2))
    a = np.linalg.norm(p1 - p0)
    b = np.linalg.norm(p2 - p1)
    c = np.linalg.norm(p2 - p0)
    if a * b * c < 1e-12:
        return 0.0
    cross = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
    return float(2.0 * cross / (a * b * c))


def polyline_distance(points, polyline) -> np.ndarray:
    """Euclidean distance from each point to a polyline."""
    pts = np.atleast_2d(np.asarray(points, float))
    line = np.asarray(polyline, float)
    a = line[:-1]
    ab = line[1:] - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-18)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(ap * ab[None], axis=-1) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(pts[:, None, :] - closest, axis=-1), axis=1)


def polyline_length(polyline) -> float:
    return float(np.sum(np.linalg.norm(np.diff(np.asarray(polyline, float), axis=0), axis=1)))
