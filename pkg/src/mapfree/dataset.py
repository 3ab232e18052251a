"""Deterministic synthetic training data.

Each frame is a small scenario (one of ``DATASET_CLASSES``) plus a
"human" ground-truth trajectory: the lattice candidate that minimises a
hidden linear cost under generous kinematic limits.  The hidden cost uses
the same feature planes as the evaluator, so a learned model can in
principle recover the demonstrator's ranking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import DATASET_CLASSES, LANE_WIDTH, DatasetConfig, LimitsConfig, RunConfig
from .core import (AgentScript, CandidateSet, EgoState, Landmark, Route, Scenario, Trajectory,
                   scenario_from_dict, scenario_to_dict)
from .evaluator import CostModel, MarginFrame, margin_frame
from .planner import EmptyCandidateSetError, safety_layer, select_best
from .samplers import build_expert_db, lattice_sampler
from .samplers.retrieval import ExpertTrajectoryDB
from .scenarios import _box, _straight_road, commuting_route_right_turn
from .simulator import PlanningFrame, ScenePlanner, agent_tracks, initial_state

DATASET_FORMAT_VERSION = 1

# demonstrator preferences: keep clear of occupancy and forecasts, stay near
# the route centre and keep up with the progress schedule
HIDDEN_MODEL = CostModel(np.array([3.0, 2.0, 0.4, 1.2, 1.5, 0.0]))

GENEROUS_LIMITS = LimitsConfig(max_accel=9.0, max_curvature=0.4, max_jerk=60.0, max_lat_accel=6.0)

ROAD_END = 110.0
GRID_MARGIN = 15.0


class DatasetGenerationError(RuntimeError):
    pass


@dataclass(eq=False)
class DatasetFrame:
    index: int
    kind: str
    scenario: Scenario
    gt: Trajectory
    _cache: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"index": self.index, "kind": self.kind, "scenario": scenario_to_dict(self.scenario),
                "gt": self.gt.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetFrame":
        return cls(int(d["index"]), d["kind"], scenario_from_dict(d["scenario"]), Trajectory.from_dict(d["gt"]))


# -- scenario classes -----------------------------------------------------------------------

def _road_route(y: float, target: float) -> Route:
    n = 14
    return Route(np.column_stack([np.linspace(-20.0, ROAD_END, n), np.full(n, y)]), "lane_center", target)


def _ego(rng: np.random.Generator, v_lo: float, v_hi: float, y: float = 0.0) -> EgoState:
    return EgoState(0.0, float(y + rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.03, 0.03)),
                    float(rng.uniform(v_lo, v_hi)))


def _cruise(rng, name):
    road = _straight_road(x1=ROAD_END)
    return Scenario(name, _ego(rng, 4.0, 14.0), _road_route(0.0, float(rng.uniform(6.0, 14.0))), 3.0,
                    landmarks=road, description="cruise")


def _lane_change(rng, name):
    road = _straight_road(x1=ROAD_END)
    # the route runs along the left lane while the ego sits in the right one
    return Scenario(name, _ego(rng, 6.0, 11.0), _road_route(LANE_WIDTH, float(rng.uniform(8.0, 11.0))), 3.0,
                    landmarks=road, description="lane change")


def _follow(rng, name):
    road = _straight_road(x1=ROAD_END)
    ego = _ego(rng, 8.0, 14.0)
    v_lead = float(rng.uniform(2.0, ego.v - 2.0))
    lead = AgentScript("lead", (float(rng.uniform(14.0, 30.0)), 0.0, 0.0, v_lead), np.zeros((30, 2)))
    # a car alongside in the left lane rules out overtaking
    side = AgentScript("side", (float(rng.uniform(-2.0, 4.0)), LANE_WIDTH, 0.0, ego.v), np.zeros((30, 2)))
    return Scenario(name, ego, _road_route(0.0, float(rng.uniform(ego.v, 14.0))), 3.0, agents=(lead, side),
                    landmarks=road, description="follow")


def _stop(rng, name):
    ego = _ego(rng, 4.0, 10.0)
    x_stop = float(rng.uniform(ego.v**2 / 4.0 + 8.0, ego.v**2 / 4.0 + 25.0))
    line = Landmark(np.array([[x_stop, -0.5 * LANE_WIDTH], [x_stop, 1.5 * LANE_WIDTH]]), "stop_line",
                    "prohibited", id="stop")
    return Scenario(name, ego, _road_route(0.0, float(rng.uniform(8.0, 12.0))), 3.0,
                    landmarks=_straight_road(x1=ROAD_END) + (line,), description="stop")


def _turn(rng, name):
    pts = commuting_route_right_turn(radius=float(rng.uniform(15.0, 30.0)))
    x0 = float(rng.uniform(0.0, 18.0))
    ego = EgoState(x0, float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.03, 0.03)), float(rng.uniform(5.0, 9.0)))
    return Scenario(name, ego, Route(pts, "commuting_history", 8.0), 3.0, description="turn")


def _static_pad(rng, scenario: Scenario) -> Scenario:
    """Sometimes park an obstacle well off the road, which only widens the grid."""
    if rng.uniform() < 0.3:
        return replace(scenario, static_obstacles=(_box(float(rng.uniform(10.0, 50.0)), -8.0, 4.8, 1.9),))
    return scenario


_BUILDERS = {"cruise": _cruise, "lane_change": _lane_change, "follow": _follow, "stop": _stop, "turn": _turn}


# -- frame inputs ---------------------------------------------------------------------------

def _lattice_config(config: RunConfig) -> RunConfig:
    cfg = RunConfig(**{k: getattr(config, k) for k in config.__dataclass_fields__})
    cfg.samplers = replace(config.samplers, curve=False, retrieval=False, generator=False, lattice=True)
    cfg.limits = GENEROUS_LIMITS
    return cfg


def frame_inputs(frame: DatasetFrame | Scenario, config: RunConfig | None = None
                 ) -> tuple[ScenePlanner, PlanningFrame, CandidateSet]:
    """Planner, planning context and lattice candidates (generous limits) for a frame."""
    config = config or RunConfig()
    scenario = frame.scenario if isinstance(frame, DatasetFrame) else frame
    cache = frame._cache if isinstance(frame, DatasetFrame) else {}
    key = config.hash()
    if key not in cache:
        cfg = _lattice_config(config)
        planner = ScenePlanner(scenario, cfg, margin=GRID_MARGIN)
        ctx = planner.context(scenario.ego_init, agent_tracks(scenario, initial_state(scenario)))
        cands = lattice_sampler(scenario.ego_init, planner.ref, scenario.route.target_speed, cfg.samplers,
                                ctx.graph, planner.stop_s, cfg.limits)
        cache[key] = (planner, ctx, cands)
    return cache[key]


def to_margin_frame(frame: DatasetFrame, config: RunConfig | None = None) -> MarginFrame:
    _, ctx, cands = frame_inputs(frame, config)
    return margin_frame(ctx.planes, frame.gt, list(cands))


def _demonstrate(frame: DatasetFrame, config: RunConfig) -> Trajectory | None:
    """Hidden-cost argmin over the lattice, if it passes the safety checks
    (at the planner's normal limits) on its own frame."""
    scenario = frame.scenario
    planner, ctx, cands = frame_inputs(frame, config)
    try:
        decision = select_best(cands, HIDDEN_MODEL, ctx.planes)
    except EmptyCandidateSetError:
        return None
    gt = decision.chosen
    checked = safety_layer(select_best([gt], HIDDEN_MODEL, ctx.planes), ctx.ego, planner.checker,
                           ctx.forecasts, None, config.safety, config.limits, scenario.ego_size)
    return None if checked.fallback else gt


def class_schedule(config: DatasetConfig) -> list[str]:
    """Deterministic class sequence matching the configured proportions."""
    unknown = set(config.proportions) - set(DATASET_CLASSES)
    if unknown:
        raise ValueError(f"unknown scenario classes: {sorted(unknown)}")
    w = np.array([max(float(config.proportions.get(c, 0.0)), 0.0) for c in DATASET_CLASSES])
    if w.sum() <= 0:
        raise ValueError("class proportions must have a positive entry")
    counts = np.floor(w / w.sum() * config.n_frames).astype(int)
    # largest remainders get the leftover frames
    rem = w / w.sum() * config.n_frames - counts
    for i in np.argsort(-rem, kind="stable")[: config.n_frames - counts.sum()]:
        counts[i] += 1
    kinds = [c for c, n in zip(DATASET_CLASSES, counts) for _ in range(n)]
    rng = np.random.default_rng(config.seed)
    return [kinds[i] for i in rng.permutation(len(kinds))]


def generate_synthetic_dataset(config: RunConfig | DatasetConfig | None = None) -> list[DatasetFrame]:
    """``n_frames`` frames across the configured classes; fully determined by the seed."""
    run = config if isinstance(config, RunConfig) else RunConfig()
    ds = config if isinstance(config, DatasetConfig) else run.dataset
    if ds.n_frames < 0:
        raise ValueError("n_frames must be >= 0")
    frames = []
    for i, kind in enumerate(class_schedule(ds)):
        rng = np.random.default_rng([ds.seed, i])
        for attempt in range(ds.max_retries):
            scenario = _static_pad(rng, _BUILDERS[kind](rng, f"{kind}_{i:04d}"))
            frame = DatasetFrame(i, kind, scenario, None)
            frame.gt = _demonstrate(frame, run)
            if frame.gt is not None:
                frames.append(frame)
                break
        else:
            raise DatasetGenerationError(f"frame {i} ({kind}): no feasible demonstration in {ds.max_retries} tries")
    return frames


def dataset_bytes(frames: Sequence[DatasetFrame], config_hash: str = "") -> bytes:
    doc = {"format_version": DATASET_FORMAT_VERSION, "config_hash": config_hash,
           "frames": [f.to_dict() for f in frames]}
    return json.dumps(doc, sort_keys=True).encode()


def save_dataset(path: str | Path, frames: Sequence[DatasetFrame], config_hash: str = "") -> None:
    Path(path).write_bytes(dataset_bytes(frames, config_hash))


def load_dataset(path: str | Path) -> list[DatasetFrame]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {doc.get('format_version')!r}")
    return [DatasetFrame.from_dict(d) for d in doc["frames"]]


def dataset_expert_db(frames: Sequence[DatasetFrame], **kwargs) -> ExpertTrajectoryDB:
    """Expert database built from the demonstrations."""
    return build_expert_db([f.gt for f in frames], **kwargs)


def split(frames: Sequence[DatasetFrame], held_out: int) -> tuple[list[DatasetFrame], list[DatasetFrame]]:
    if not 0 <= held_out <= len(frames):
        raise ValueError("held_out must lie in [0, len(frames)]")
    cut = len(frames) - held_out
    return list(frames[:cut]), list(frames[cut:])

