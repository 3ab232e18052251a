"""Global time base, grid geometry defaults and the run configuration.

The time base (0.1 s steps, 15 history frames, 30 future frames) is defined
once here and imported everywhere else.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np

DT = 0.1
HISTORY_STEPS = 15
HORIZON_STEPS = 30
HORIZON = DT * HORIZON_STEPS

GRID_ROWS = 500
GRID_COLS = 500
GRID_RESOLUTION = 0.2
RASTER_CHANNELS = 5

EGO_LENGTH = 4.8
EGO_WIDTH = 1.9
WHEELBASE = 2.8
LANE_WIDTH = 3.5


def horizon_times() -> np.ndarray:
    """Waypoint timestamps 0.1, 0.2, ..., 3.0 s."""
    return DT * np.arange(1, HORIZON_STEPS + 1)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class GridConfig:
    rows: int = GRID_ROWS
    cols: int = GRID_COLS
    resolution: float = GRID_RESOLUTION


@dataclass
class SamplerConfig:
    curve: bool = True
    retrieval: bool = False
    lattice: bool = True
    generator: bool = False
    # curve sampler sweeps
    straight_accels: list[float] = field(default_factory=lambda: [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0])
    circle_steering: list[float] = field(
        default_factory=lambda: [-0.2, -0.1, -0.05, -0.02, 0.02, 0.05, 0.1, 0.2]
    )
    circle_accels: list[float] = field(default_factory=lambda: [-2.0, 0.0, 1.0])
    clothoid_scales: list[float] = field(default_factory=lambda: [20.0, 40.0, 80.0, 160.0])
    clothoid_accels: list[float] = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    # lattice sweeps
    cruise_speed_offsets: list[float] = field(
        default_factory=lambda: [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0]
    )
    cruise_times: list[float] = field(default_factory=lambda: [2.0, 3.0, 4.0])
    stop_times: list[float] = field(default_factory=lambda: [1.5, 2.0, 2.5, 3.0, 4.0])
    stop_decels: list[float] = field(default_factory=lambda: [2.0, 4.0, 6.0])
    follow_times: list[float] = field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0])
    follow_gaps: list[float] = field(default_factory=lambda: [0.0, 3.0])
    lateral_offsets: list[float] = field(
        default_factory=lambda: [0.0, -0.5, 0.5, -1.0, 1.0, -LANE_WIDTH, LANE_WIDTH]
    )
    lateral_times: list[float] = field(default_factory=lambda: [2.5, 4.0])
    st_headway: float = 0.5
    st_min_gap: float = 2.0
    st_lateral_margin: float = 0.3
    generator_draws: int = 8


@dataclass
class LimitsConfig:
    max_accel: float = 6.5
    max_curvature: float = 0.3
    max_jerk: float = 30.0
    max_lat_accel: float = 4.0


@dataclass
class EvaluatorConfig:
    alpha: float = 1.0
    beta: float = 1.0
    occupancy_inflation: float = 2.5
    prediction_inflation: float = 3.0
    route_distance_scale: float = 10.0
    lateral_scale: float = 1.75
    progress_scale: float = 10.0
    include_movable: bool = False


@dataclass
class SafetyConfig:
    n_reserved: int = 3
    consistency_weight: float = 0.1
    lateral_margin: float = 0.3
    longitudinal_margin: float = 0.5
    static_margin: float = 0.15
    fallback_decel: float = 4.0


@dataclass
class TrainingConfig:
    learning_rate: float = 5e-4
    epochs: int = 200
    seed: int = 0
    l2_reg: float = 1e-4
    max_step: float = 10.0
    gan_steps: int = 150
    gan_learning_rate: float = 0.02
    imitation_steps: int = 100
    latent_dim: int = 4
    modes: int = 6
    freeze_evaluator: bool = False


DATASET_CLASSES = ("cruise", "lane_change", "follow", "stop", "turn")


@dataclass
class DatasetConfig:
    n_frames: int = 250
    seed: int = 0
    # relative class weights, normalised at generation time
    proportions: dict[str, float] = field(default_factory=lambda: {c: 1.0 for c in DATASET_CLASSES})
    max_retries: int = 25
    held_out: int = 50


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    samplers: SamplerConfig = field(default_factory=SamplerConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    dt: float = DT
    history_steps: int = HISTORY_STEPS
    horizon_steps: int = HORIZON_STEPS
    seed: int = 0
    scenario_paths: list[str] = field(default_factory=list)
    output_dir: str = "out"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        if abs(self.dt - DT) > 1e-12 or self.history_steps != HISTORY_STEPS or self.horizon_steps != HORIZON_STEPS:
            raise ConfigError(
                f"time base is fixed at dt={DT}, history={HISTORY_STEPS}, horizon={HORIZON_STEPS}"
            )
        if self.grid.resolution <= 0 or self.grid.rows <= 0 or self.grid.cols <= 0:
            raise ConfigError("grid dimensions and resolution must be positive")
        if self.evaluator.alpha < 0 or self.evaluator.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.safety.n_reserved < 1:
            raise ConfigError("safety.n_reserved must be >= 1")
        for name in ("max_accel", "max_curvature", "max_jerk", "max_lat_accel"):
            if getattr(self.limits, name) <= 0:
                raise ConfigError(f"limits.{name} must be positive")
        for p in self.scenario_paths:
            if not Path(p).exists():
                raise ConfigError(f"scenario path not found: {p}")


def _merge(obj: Any, data: dict[str, Any], path: str = "") -> None:
    names = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key: {path}{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path}{key} expects a mapping")
            _merge(current, value, f"{path}{key}.")
        else:
            setattr(obj, key, copy.deepcopy(value))


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    cfg = RunConfig()
    _merge(cfg, data)
    return cfg


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a JSON config file, then apply dotted-key overrides.

    Precedence: built-in defaults < file < overrides (CLI flags).
    ``path`` may be ``None`` or ``"default"`` for the built-in defaults.
    """
    cfg = RunConfig()
    if path not in (None, "default"):
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"malformed config {p}: top level must be an object")
        _merge(cfg, data)
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        nested: dict[str, Any] = {parts[-1]: value}
        for part in reversed(parts[:-1]):
            nested = {part: nested}
        _merge(cfg, nested)
    cfg.validate()
    return cfg
