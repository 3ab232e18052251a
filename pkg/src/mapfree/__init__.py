"""Map-free trajectory planning toolkit: BEV rasterisation, grid prediction,
curve/retrieval/lattice/generative sampling, a learned linear cost-volume
evaluator with max-margin training, a rule-based safety layer and a
closed-loop kinematic simulator."""

from .config import DT, HISTORY_STEPS, HORIZON_STEPS, RunConfig, load_config
from .core import CandidateSet, EgoState, Scenario, Trajectory
from .evaluator import CostModel
from .pipeline import evaluate_trajectory, sample_scenario, scene_raster, train_cost, train_gan
from .scenarios import get_scenario, scenario_suite
from .simulator import compare_samplers, run_closed_loop

__all__ = [
    "DT", "HISTORY_STEPS", "HORIZON_STEPS", "RunConfig", "load_config", "CandidateSet", "EgoState", "Scenario",
    "Trajectory", "CostModel", "evaluate_trajectory", "sample_scenario", "scene_raster", "train_cost", "train_gan",
    "get_scenario", "scenario_suite", "compare_samplers", "run_closed_loop",
]
__version__ = "0.1.0"
