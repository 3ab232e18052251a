"""Library-level entry points; each command-line verb is a thin wrapper
around one of these, so both give identical results."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import RunConfig
from .core import CandidateSet, EgoState, Route, Scenario, Trajectory, validate_scenario
from .dataset import DatasetFrame, frame_inputs, generate_synthetic_dataset, split, to_margin_frame
from .evaluator import (CostBreakdown, CostModel, TrainingResult, cost_volume, rank_of_gt, train_cost_model,
                        trajectory_cost)
from .generative import GanResult, PlanningContext, ToyGenerator, rollout, train_gan_planner
from .raster import BevRaster, GridGeometry, SceneFrame, rasterize_scene
from .samplers.retrieval import ExpertTrajectoryDB
from .simulator import PlanningFrame, ScenePlanner, agent_tracks, initial_state


def initial_frame(scenario: Scenario, config: RunConfig | None = None, model: CostModel | None = None,
                  expert_db: ExpertTrajectoryDB | None = None, generator: ToyGenerator | None = None
                  ) -> tuple[ScenePlanner, PlanningFrame]:
    """Planner and planning context at the scenario's first step."""
    validate_scenario(scenario)
    planner = ScenePlanner(scenario, config or RunConfig(), model or CostModel(), expert_db, generator)
    return planner, planner.context(scenario.ego_init, agent_tracks(scenario, initial_state(scenario)))


def sample_scenario(scenario: Scenario, config: RunConfig | None = None, expert_db: ExpertTrajectoryDB | None = None,
                    generator: ToyGenerator | None = None) -> CandidateSet:
    """Kinematically filtered candidates from the enabled samplers at the first step."""
    planner, fr = initial_frame(scenario, config, None, expert_db, generator)
    return planner.candidates(fr.ego, fr.planes, fr.graph)


def evaluate_trajectory(scenario: Scenario, traj: Trajectory, config: RunConfig | None = None,
                        model: CostModel | None = None) -> CostBreakdown:
    model = model or CostModel()
    _, fr = initial_frame(scenario, config, model)
    return trajectory_cost(traj, cost_volume(model, fr.planes), fr.planes, model.alpha, model.beta)


def scene_raster(scenario: Scenario, config: RunConfig | None = None) -> BevRaster:
    """Ego-centred raster of the first step."""
    cfg = config or RunConfig()
    e = scenario.ego_init
    geom = GridGeometry.centered(e.x, e.y, cfg.grid.rows, cfg.grid.cols, cfg.grid.resolution)
    frame = SceneFrame(e, scenario.route, ego_size=scenario.ego_size,
                       agents=tuple(agent_tracks(scenario, initial_state(scenario))),
                       landmarks=scenario.landmarks, static_obstacles=scenario.static_obstacles)
    return rasterize_scene(frame, geom)


@dataclass
class CostTrainingReport:
    result: TrainingResult
    train_frames: list[DatasetFrame]
    held_out: list[DatasetFrame]
    held_out_ranks: list[int]

    @property
    def held_out_accuracy(self) -> float:
        return float(np.mean([r == 0 for r in self.held_out_ranks])) if self.held_out_ranks else float("nan")


def train_cost(config: RunConfig | None = None, frames: Sequence[DatasetFrame] | None = None,
               init: CostModel | None = None) -> CostTrainingReport:
    """Generate (or take) the synthetic dataset, train on all but the held-out
    tail (at most a fifth of the frames) and rank each held-out ground truth
    among its lattice candidates."""
    cfg = config or RunConfig()
    frames = list(frames) if frames is not None else generate_synthetic_dataset(cfg)
    train, held = split(frames, min(cfg.dataset.held_out, len(frames) // 5))
    result = train_cost_model([to_margin_frame(f, cfg) for f in train], cfg.training, init)
    ranks = [rank_of_gt(result.model, to_margin_frame(f, cfg)) for f in held]
    return CostTrainingReport(result, train, held, ranks)


def corridor_scenario(half_width: float = 2.5, speed: float = 8.0, length: float = 120.0) -> Scenario:
    """Straight corridor between two walls; cheap everywhere inside."""
    x0, x1, t = -20.0, length, 1.5
    walls = (np.array([[x0, half_width], [x1, half_width], [x1, half_width + t], [x0, half_width + t]]),
             np.array([[x0, -half_width - t], [x1, -half_width - t], [x1, -half_width], [x0, -half_width]]))
    route = Route(np.column_stack([np.linspace(x0, x1, 15), np.zeros(15)]), "lane_center", speed)
    return Scenario("corridor", EgoState(0.0, 0.0, 0.0, speed), route, 3.0, static_obstacles=walls,
                    description="walled corridor")


def planning_context(scenario: Scenario, config: RunConfig | None = None) -> PlanningContext:
    planner, fr = initial_frame(scenario, config)
    return PlanningContext(fr.ego, planner.ref, scenario.route.target_speed, fr.planes)


def centre_line_demo(ctx: PlanningContext) -> Trajectory:
    """Hold speed on the route centre line."""
    ro = rollout(ctx, ctx.target_speed, 0.0)
    e = ctx.ego
    return Trajectory.from_arrays(ro.xy[:, 0], ro.xy[:, 1], ro.heading, ro.speed, "lane_keep", "imitation",
                                  (e.x, e.y, e.heading, e.v), label="centre line")


def train_gan(model: CostModel, config: RunConfig | None = None, scene: str = "corridor",
              n_frames: int = 8) -> GanResult:
    """GAN-style generator training.  ``scene='corridor'`` uses the single
    walled corridor with a centre-line demonstration; ``'dataset'`` uses the
    first ``n_frames`` synthetic frames and their demonstrations."""
    cfg = config or RunConfig()
    if scene == "corridor":
        ctx = planning_context(corridor_scenario(), cfg)
        frames = [(ctx, centre_line_demo(ctx))]
    elif scene == "dataset":
        ds = generate_synthetic_dataset(replace(cfg, dataset=replace(cfg.dataset, n_frames=n_frames)))
        frames = []
        for f in ds:
            planner, fr, _ = frame_inputs(f, cfg)
            frames.append((PlanningContext(fr.ego, planner.ref, f.scenario.route.target_speed, fr.planes), f.gt))
    else:
        raise ValueError(f"unknown GAN scene {scene!r}; use 'corridor' or 'dataset'")
    return train_gan_planner(frames, model, cfg.training)
