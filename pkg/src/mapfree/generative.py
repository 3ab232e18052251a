"""Toy generative planner.

An affine map from hand-built conditioning features and a latent vector to
two end conditions (end speed, end lateral offset).  These fix a quartic
longitudinal profile and a quintic lateral profile in the route's Frenet
frame, with the start conditions taken from the ego, so every output is
smooth and starts at the ego state.  Because waypoints depend smoothly on
the two end conditions, the gradient of the trajectory cost flows through
the soft cost lookup and the polynomial map analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import HORIZON, LANE_WIDTH, TrainingConfig, horizon_times
from .core import CandidateSet, EgoState, Trajectory
from .evaluator import CostModel, FeaturePlanes, TrainingDivergedError, max_margin_loss
from .geometry import FrenetState, ReferenceLine, fit_quartic, fit_quintic, frenet_state_of

N_COND = 7
MIN_LATERAL_SPAN = 10.0


@dataclass(eq=False)
class PlanningContext:
    ego: EgoState
    ref: ReferenceLine
    target_speed: float
    planes: FeaturePlanes
    _fs: FrenetState | None = field(default=None, repr=False)

    @property
    def frenet(self) -> FrenetState:
        if self._fs is None:
            self._fs = frenet_state_of(self.ego, self.ref)
        return self._fs

    def conditioning(self) -> np.ndarray:
        """(v, a, target speed, lateral offset, route curvature at 3 look-aheads), roughly unit scale."""
        fs = self.frenet
        ahead = np.clip(fs.s + np.array([5.0, 15.0, 30.0]), 0.0, self.ref.length)
        kappa = self.ref.curvature(ahead)
        return np.concatenate([[self.ego.v / 10.0, self.ego.a / 2.0, self.target_speed / 10.0,
                                fs.l / LANE_WIDTH], 20.0 * kappa])


@dataclass(frozen=True, eq=False)
class Rollout:
    xy: np.ndarray       # (30, 2)
    heading: np.ndarray
    speed: np.ndarray
    dxy: np.ndarray      # (30, 2, 2): d xy / d (v_end, l_end)
    valid: bool


def rollout(ctx: PlanningContext, v_end: float, l_end: float) -> Rollout:
    """Waypoints for given end conditions plus their Jacobian."""
    fs = ctx.frenet
    t = horizon_times()
    v0 = max(fs.s_dot, 0.0)
    lon = fit_quartic(fs.s, v0, fs.s_ddot, v_end, 0.0, HORIZON)
    # s(t) is linear in v_end: unit-response profile gives ds/dv_end
    unit = fit_quartic(0.0, 0.0, 0.0, 1.0, 0.0, HORIZON)
    s, sd, ds_dv = lon(t), lon(t, 1), unit(t)
    # keep the path non-reversing
    s = np.maximum.accumulate(np.maximum(s, fs.s))
    sd = np.maximum(sd, 0.0)
    span = max(MIN_LATERAL_SPAN, v0 * HORIZON)
    lat = fit_quintic((fs.l, fs.l_prime, fs.l_pprime), (l_end, 0.0, 0.0), span)
    lunit = fit_quintic((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), span)
    ds = np.minimum(s - fs.s, span)
    inside = (s - fs.s) < span
    l = lat(ds)
    lp = np.where(inside, lat(ds, 1), 0.0)
    dl_dlend = lunit(ds)
    valid = bool(s[-1] <= ctx.ref.length)
    sc = np.clip(s, 0.0, ctx.ref.length)
    p, tan, nrm, kappa = ctx.ref.frame(sc)
    xy = p + l[:, None] * nrm
    one_minus = 1.0 - kappa * l
    heading = np.arctan2(tan[:, 1], tan[:, 0]) + np.arctan2(lp, one_minus)
    speed = sd * np.sqrt(one_minus**2 + lp**2)
    dxy_ds = tan * one_minus[:, None] + nrm * lp[:, None]
    dxy = np.stack([dxy_ds * ds_dv[:, None], nrm * dl_dlend[:, None]], axis=-1)
    return Rollout(xy, heading, speed, dxy, valid)


def _adam(state: dict, grad: np.ndarray, lr: float, b1=0.9, b2=0.999, eps=1e-8) -> np.ndarray:
    state["t"] = state.get("t", 0) + 1
    state["m"] = b1 * state.get("m", 0.0) + (1 - b1) * grad
    state["v"] = b2 * state.get("v", 0.0) + (1 - b2) * grad * grad
    mh = state["m"] / (1 - b1 ** state["t"])
    vh = state["v"] / (1 - b2 ** state["t"])
    return lr * mh / (np.sqrt(vh) + eps)


@dataclass(eq=False)
class ToyGenerator:
    """``(v_end, l_end) = W @ [conditioning, m, 1]``; ``mode`` is
    ``'imitation'`` (fixed latent anchors, one per mode) or ``'gan'``
    (Gaussian latent draws)."""

    weights: np.ndarray
    latent_dim: int = 4
    modes: int = 6
    mode: str = "imitation"
    anchor_seed: int = 7

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, float)
        if self.weights.shape != (2, N_COND + self.latent_dim + 1):
            raise ValueError("generator weights must be (2, conditioning + latent + 1)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("generator weights must be finite")

    @classmethod
    def initial(cls, latent_dim: int = 4, modes: int = 6, seed: int = 0, latent_scale: float = 0.5) -> "ToyGenerator":
        """Cruise at the target speed on the route, latent directions spread
        end speed and lateral offset."""
        rng = np.random.default_rng(seed)
        w = np.zeros((2, N_COND + latent_dim + 1))
        w[0, 2] = 10.0  # target speed feature is speed / 10
        w[:, N_COND:N_COND + latent_dim] = latent_scale * rng.standard_normal((2, latent_dim))
        return cls(w, latent_dim, modes)

    @classmethod
    def constant(cls, v_end: float, l_end: float, latent_dim: int = 4, modes: int = 1) -> "ToyGenerator":
        w = np.zeros((2, N_COND + latent_dim + 1))
        w[:, -1] = (v_end, l_end)
        return cls(w, latent_dim, modes)

    def anchors(self) -> np.ndarray:
        return np.random.default_rng(self.anchor_seed).standard_normal((self.modes, self.latent_dim))

    def latents(self, draws: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.mode == "imitation":
            a = self.anchors()
            return a[np.arange(draws) % len(a)]
        rng = rng or np.random.default_rng(0)
        return rng.standard_normal((draws, self.latent_dim))

    def inputs(self, ctx: PlanningContext, m: np.ndarray) -> np.ndarray:
        c = ctx.conditioning()
        return np.column_stack([np.broadcast_to(c, (len(m), N_COND)), m, np.ones(len(m))])

    def ends(self, x: np.ndarray) -> np.ndarray:
        out = x @ self.weights.T
        out[:, 0] = np.maximum(out[:, 0], 0.0)
        return out

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "latent_dim": self.latent_dim, "modes": self.modes,
                "mode": self.mode, "anchor_seed": self.anchor_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ToyGenerator":
        return cls(np.asarray(d["weights"], float), int(d["latent_dim"]), int(d["modes"]), d["mode"],
                   int(d.get("anchor_seed", 7)))


def _trajectory(ctx: PlanningContext, ro: Rollout, source: str, label: str) -> Trajectory:
    e = ctx.ego
    return Trajectory.from_arrays(ro.xy[:, 0], ro.xy[:, 1], ro.heading, ro.speed, "generative", source,
                                  (e.x, e.y, e.heading, e.v), label=label)


def sample_generator(gen: ToyGenerator, ctx: PlanningContext, draws: int | None = None,
                     seed: int = 0) -> CandidateSet:
    draws = gen.modes if draws is None else draws
    m = gen.latents(draws, np.random.default_rng(seed))
    ends = gen.ends(gen.inputs(ctx, m))
    out = []
    for k, (v_end, l_end) in enumerate(ends):
        ro = rollout(ctx, float(v_end), float(l_end))
        if ro.valid:
            out.append(_trajectory(ctx, ro, "gan" if gen.mode == "gan" else "imitation",
                                   f"gen#{k} v={v_end:.2f} l={l_end:.2f}"))
    return CandidateSet(out, "" if out else "generator: every draw runs past the reference end")


# -- losses and training ------------------------------------------------------------------

def _cost_grad(model: CostModel, planes: FeaturePlanes, xy: np.ndarray) -> tuple[float, np.ndarray]:
    fs = planes.sample(xy)
    e = float(np.sum(fs.phi @ model.weights + model.alpha * fs.occ + model.beta * fs.pred))
    g = np.einsum("tfd,f->td", fs.dphi, model.weights) + model.alpha * fs.docc + model.beta * fs.dpred
    return e, g


def generator_loss(gen: ToyGenerator, ctx: PlanningContext, gt: Trajectory, model: CostModel | None,
                   m: np.ndarray, cost_weight: float = 1.0) -> tuple[float, np.ndarray, dict]:
    """Mean cost of the draws plus the multimodal imitation loss, with the
    gradient w.r.t. the generator weights."""
    x = gen.inputs(ctx, m)
    ends = gen.ends(x)
    grad_w = np.zeros_like(gen.weights)
    costs, dists, rollouts = [], [], []
    for k, (v_end, l_end) in enumerate(ends):
        ro = rollout(ctx, float(v_end), float(l_end))
        rollouts.append(ro)
        if model is not None and cost_weight > 0:
            e, g = _cost_grad(model, ctx.planes, ro.xy)
            costs.append(e)
            d_end = np.einsum("td,tde->e", g, ro.dxy) * cost_weight / len(ends)
            if x[k] @ gen.weights[0] < 0:
                d_end[0] = 0.0
            grad_w += np.outer(d_end, x[k])
        dists.append(np.linalg.norm(ro.xy - gt.xy, axis=1))
    mean_d = [float(np.mean(d)) for d in dists]
    i = int(np.argmin(mean_d))
    diff = rollouts[i].xy - gt.xy
    norm = np.maximum(dists[i], 1e-9)[:, None]
    dimit_dxy = diff / norm / len(diff)
    d_end = np.einsum("td,tde->e", dimit_dxy, rollouts[i].dxy)
    if x[i] @ gen.weights[0] < 0:
        d_end[0] = 0.0
    grad_w += np.outer(d_end, x[i])
    e_mean = float(np.mean(costs)) if costs else 0.0
    loss = cost_weight * e_mean + mean_d[i]
    return loss, grad_w, {"cost": e_mean, "imitation": mean_d[i], "mode": i}


@dataclass
class GanResult:
    generator: ToyGenerator
    model: CostModel
    generator_trace: list[float]
    evaluator_trace: list[float]
    imitation_trace: list[float]


def train_imitation(frames: Sequence[tuple[PlanningContext, Trajectory]], gen: ToyGenerator,
                    steps: int = 100, lr: float = 0.05) -> tuple[ToyGenerator, list[float]]:
    """Multimodal imitation only (winner-take-all over fixed anchors)."""
    if not frames:
        raise ValueError("imitation training needs frames")
    gen = ToyGenerator(gen.weights.copy(), gen.latent_dim, gen.modes, "imitation", gen.anchor_seed)
    state: dict = {}
    trace = []
    m = gen.anchors()
    for _ in range(steps):
        total, grad = 0.0, np.zeros_like(gen.weights)
        for ctx, gt in frames:
            loss, g, _ = generator_loss(gen, ctx, gt, None, m, 0.0)
            total += loss
            grad += g
        trace.append(total / len(frames))
        gen.weights = gen.weights - _adam(state, grad / len(frames), lr)
    return gen, trace


def train_gan_planner(frames: Sequence[tuple[PlanningContext, Trajectory]], model: CostModel,
                      config: TrainingConfig | None = None, generator: ToyGenerator | None = None,
                      extra_candidates: Sequence[Sequence[Trajectory]] | None = None) -> GanResult:
    """Alternate generator steps on E(G(m)) + imitation with evaluator
    steps on the max-margin loss against the generator's outputs.

    The generator is warm-started with imitation-only training.  With
    ``config.freeze_evaluator`` the evaluator is left untouched.
    """
    cfg = config or TrainingConfig()
    if not frames:
        raise ValueError("GAN training needs frames")
    rng = np.random.default_rng(cfg.seed)
    gen = generator or ToyGenerator.initial(cfg.latent_dim, cfg.modes, cfg.seed)
    gen, imit_trace = train_imitation(frames, gen, cfg.imitation_steps, cfg.gan_learning_rate)
    gen.mode = "gan"
    model = CostModel(model.weights.copy(), model.alpha, model.beta)
    g_state: dict = {}
    g_trace, e_trace = [], []
    lr_e = cfg.learning_rate
    for step in range(cfg.gan_steps):
        total, grad = 0.0, np.zeros_like(gen.weights)
        for ctx, gt in frames:
            m = rng.standard_normal((gen.modes, gen.latent_dim))
            loss, g, _ = generator_loss(gen, ctx, gt, model, m)
            total += loss
            grad += g
        g_loss = total / len(frames)
        if not np.isfinite(g_loss) or g_loss > 1e6:
            raise TrainingDivergedError(f"generator loss {g_loss:.3g} at step {step}", g_trace, gen.weights)
        g_trace.append(g_loss)
        gen.weights = gen.weights - _adam(g_state, grad / len(frames), cfg.gan_learning_rate)
        # evaluator step: ground truth against fresh generator samples
        e_total, e_grad = 0.0, np.zeros_like(model.weights)
        for j, (ctx, gt) in enumerate(frames):
            cands = list(sample_generator(gen, ctx, gen.modes, seed=int(rng.integers(1 << 31))))
            if extra_candidates is not None:
                cands += list(extra_candidates[j])
            if not cands:
                continue
            loss, g = max_margin_loss(model, ctx.planes, gt, cands)
            e_total += loss
            e_grad += g
        e_loss = e_total / len(frames)
        if not np.isfinite(e_loss) or e_loss > 1e6:
            raise TrainingDivergedError(f"evaluator loss {e_loss:.3g} at step {step}", e_trace, model.weights)
        e_trace.append(e_loss)
        if not cfg.freeze_evaluator:
            model.weights = model.weights - lr_e * (e_grad / len(frames) + cfg.l2_reg * model.weights)
    return GanResult(gen, model, g_trace, e_trace, imit_trace)
