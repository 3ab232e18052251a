"""Domain types shared by every module: ego/agent states, trajectories,
routes, scenarios and candidate sets.

All coordinates are in the Ego-ENU convention: x east, y north, heading
measured counter-clockwise from east in radians.  Scenario files use a
fixed world ENU origin; each planning frame re-centres its grids on the ego
(a pure translation, so axis directions never change).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .config import DT, EGO_LENGTH, EGO_WIDTH, GRID_COLS, GRID_RESOLUTION, GRID_ROWS, HISTORY_STEPS, HORIZON_STEPS, WHEELBASE

SCENARIO_FORMAT_VERSION = 1

MANEUVERS = (
    "lane_keep",
    "lane_change_left",
    "lane_change_right",
    "follow",
    "overtake",
    "stop",
    "turn",
    "generative",
)
# Order doubles as the deterministic tie-break order in candidate ranking.
SOURCES = ("lattice", "curve", "retrieval", "imitation", "gan", "human")
AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist", "unknown")
LANDMARK_LABELS = ("lane_center", "lane_divider", "road_boundary", "stop_line")
LIGHT_STATES = ("permitted", "yield", "prohibited")
ROUTE_SOURCES = ("lane_center", "commuting_history")


class ScenarioValidationError(ValueError):
    """Raised by :func:`validate_scenario`; ``errors`` lists every violation."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _frozen_array(values: Any, shape_tail: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape_tail is not None and (arr.ndim != len(shape_tail) + 1 or arr.shape[1:] != shape_tail):
        if arr.size == 0:
            arr = arr.reshape((0,) + shape_tail)
        else:
            raise ValueError(f"expected array of shape (n, {shape_tail}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


def curvature_of_steering(phi: float, wheelbase: float) -> float:
    # Same relation as geometry.curvature_from_steering, without the range checks.
    return 2.0 * math.tan(phi) / wheelbase


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    heading: float
    v: float
    a: float = 0.0
    steering: float = 0.0
    wheelbase: float = WHEELBASE
    curvature: float | None = None

    def __post_init__(self) -> None:
        if self.curvature is None and self.wheelbase > 0 and abs(self.steering) < math.pi / 2:
            object.__setattr__(self, "curvature", curvature_of_steering(self.steering, self.wheelbase))

    @property
    def kappa(self) -> float:
        return 0.0 if self.curvature is None else self.curvature

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])

    def errors(self, path: str = "ego") -> list[str]:
        out = []
        vals = [self.x, self.y, self.heading, self.v, self.a, self.steering, self.wheelbase, self.kappa]
        if not all(math.isfinite(v) for v in vals):
            out.append(f"{path}: all fields must be finite")
        if not self.wheelbase > 0:
            out.append(f"{path}.wheelbase must be > 0")
        elif abs(self.steering) < math.pi / 2 and self.curvature is not None:
            expected = curvature_of_steering(self.steering, self.wheelbase)
            if abs(expected - self.curvature) > 1e-9:
                out.append(f"{path}.curvature inconsistent with steering (expected {expected:.6g})")
        return out


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """Tracked agent with up to 15 history states, oldest first.

    ``history`` rows are ``(t, x, y, heading, v)``; the last row is the
    current state.  ``v`` may be NaN when the tracker did not report it.
    """

    id: str
    length: float
    width: float
    history: np.ndarray
    cls: str = "vehicle"

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", _frozen_array(self.history, (5,)))

    @property
    def current(self) -> np.ndarray:
        return self.history[-1]

    def errors(self, path: str | None = None) -> list[str]:
        path = path or f"agent[{self.id}]"
        out = []
        if not (self.length > 0 and self.width > 0):
            out.append(f"{path}: length and width must be > 0")
        if len(self.history) == 0:
            out.append(f"{path}: history is empty")
        elif len(self.history) > HISTORY_STEPS:
            out.append(f"{path}: history longer than {HISTORY_STEPS} states")
        if len(self.history) > 1:
            gaps = np.diff(self.history[:, 0])
            if np.any(np.abs(gaps - DT) > 1e-6):
                out.append(f"{path}: history must be spaced at {DT} s (agent {self.id})")
        if self.cls not in AGENT_CLASSES:
            out.append(f"{path}: unknown class {self.cls!r}")
        return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """30 waypoints ``(t, x, y, heading, v)`` at t = 0.1 .. 3.0 s.

    ``origin`` holds the ``(x, y, heading, v)`` pose the trajectory was
    generated from (its t = 0 state) when known.
    """

    waypoints: np.ndarray
    maneuver: str = "lane_keep"
    source: str = "human"
    origin: np.ndarray | None = None
    label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", _frozen_array(self.waypoints, (5,)))
        if self.origin is not None:
            origin = _frozen_array(self.origin)
            if origin.shape != (4,):
                raise ValueError("origin must be (x, y, heading, v)")
            object.__setattr__(self, "origin", origin)

    @classmethod
    def from_arrays(
        cls,
        x: Sequence[float],
        y: Sequence[float],
        heading: Sequence[float],
        v: Sequence[float],
        maneuver: str = "lane_keep",
        source: str = "human",
        origin: Sequence[float] | None = None,
        t: Sequence[float] | None = None,
        label: str = "",
    ) -> "Trajectory":
        x = np.asarray(x, dtype=float)
        times = DT * np.arange(1, len(x) + 1) if t is None else np.asarray(t, dtype=float)
        wp = np.column_stack([times, x, np.asarray(y, float), np.asarray(heading, float), np.asarray(v, float)])
        return cls(wp, maneuver, source, None if origin is None else np.asarray(origin, float), label)

    @property
    def t(self) -> np.ndarray:
        return self.waypoints[:, 0]

    @property
    def xy(self) -> np.ndarray:
        return self.waypoints[:, 1:3]

    @property
    def heading(self) -> np.ndarray:
        return self.waypoints[:, 3]

    @property
    def v(self) -> np.ndarray:
        return self.waypoints[:, 4]

    def with_tags(self, **kwargs: Any) -> "Trajectory":
        return replace(self, **kwargs)

    def path_with_origin(self) -> np.ndarray:
        """(x, y) polyline starting at the origin pose when known."""
        if self.origin is None:
            return self.xy
        return np.vstack([self.origin[:2], self.xy])

    def to_dict(self) -> dict[str, Any]:
        d = {
            "waypoints": self.waypoints.tolist(),
            "maneuver": self.maneuver,
            "source": self.source,
        }
        if self.origin is not None:
            d["origin"] = self.origin.tolist()
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Trajectory":
        return cls(
            np.asarray(d["waypoints"], float),
            d.get("maneuver", "lane_keep"),
            d.get("source", "human"),
            None if d.get("origin") is None else np.asarray(d["origin"], float),
            d.get("label", ""),
        )


def trajectory_errors(traj: Trajectory, path: str = "trajectory") -> list[str]:
    out = []
    wp = traj.waypoints
    if wp.shape != (HORIZON_STEPS, 5):
        return [f"{path}: expected {HORIZON_STEPS} waypoints, got {wp.shape[0]}"]
    if not np.all(np.isfinite(wp)):
        out.append(f"{path}: non-finite waypoint values")
    expected_t = DT * np.arange(1, HORIZON_STEPS + 1)
    if np.any(np.abs(wp[:, 0] - expected_t) > 1e-9):
        out.append(f"{path}: waypoint times must be 0.1*k for k=1..{HORIZON_STEPS}")
    if np.any(wp[:, 4] < 0):
        out.append(f"{path}: negative speed")
    if traj.maneuver not in MANEUVERS:
        out.append(f"{path}: unknown maneuver {traj.maneuver!r}")
    if traj.source not in SOURCES:
        out.append(f"{path}: unknown source {traj.source!r}")
    return out


def is_valid_trajectory(traj: Trajectory) -> bool:
    return not trajectory_errors(traj)


@dataclass(frozen=True, eq=False)
class Route:
    points: np.ndarray
    source: str = "lane_center"
    target_speed: float = 10.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _frozen_array(self.points, (2,)))

    def errors(self, path: str = "route") -> list[str]:
        out = []
        if len(self.points) < 2:
            out.append(f"{path}: needs at least 2 points")
        elif np.any(np.linalg.norm(np.diff(self.points, axis=0), axis=1) <= 0):
            out.append(f"{path}: consecutive points must be distinct")
        if not np.all(np.isfinite(self.points)):
            out.append(f"{path}: non-finite points")
        if not self.target_speed >= 0:
            out.append(f"{path}.target_speed must be >= 0")
        if self.source not in ROUTE_SOURCES:
            out.append(f"{path}.source must be one of {ROUTE_SOURCES}")
        return out

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


@dataclass(frozen=True, eq=False)
class Landmark:
    points: np.ndarray
    label: str = "lane_center"
    state: str = "permitted"  # only meaningful for stop lines
    id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _frozen_array(self.points, (2,)))


@dataclass(frozen=True, eq=False)
class AgentScript:
    """Open-loop motion program: initial state plus per-step (a, phi) commands.

    Steps past the end of ``commands`` hold ``(0, 0)``.
    """

    id: str
    initial: tuple[float, float, float, float]  # x, y, heading, v
    commands: np.ndarray
    length: float = EGO_LENGTH
    width: float = EGO_WIDTH
    cls: str = "vehicle"
    wheelbase: float = WHEELBASE

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))
        object.__setattr__(self, "commands", _frozen_array(self.commands, (2,)))

    def command(self, step: int) -> tuple[float, float]:
        if 0 <= step < len(self.commands):
            a, phi = self.commands[step]
            return float(a), float(phi)
        return 0.0, 0.0


@dataclass(frozen=True)
class ScenarioGrid:
    rows: int = GRID_ROWS
    cols: int = GRID_COLS
    resolution: float = GRID_RESOLUTION


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    ego_init: EgoState
    route: Route
    duration: float
    agents: tuple[AgentScript, ...] = ()
    landmarks: tuple[Landmark, ...] = ()
    static_obstacles: tuple[np.ndarray, ...] = ()
    grid: ScenarioGrid = field(default_factory=ScenarioGrid)
    ego_size: tuple[float, float] = (EGO_LENGTH, EGO_WIDTH)
    goal_s: float | None = None  # arc length along the route that counts as completion
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        object.__setattr__(
            self, "static_obstacles", tuple(_frozen_array(p, (2,)) for p in self.static_obstacles)
        )

    @property
    def steps(self) -> int:
        return int(round(self.duration / DT))


def scenario_errors(scenario: Scenario) -> list[str]:
    errs: list[str] = []
    if not scenario.duration > 0:
        errs.append("duration must be > 0")
    errs += scenario.ego_init.errors("ego_init")
    errs += scenario.route.errors("route")
    if not scenario.grid.resolution > 0:
        errs.append("grid.resolution must be > 0")
    if scenario.grid.rows <= 0 or scenario.grid.cols <= 0:
        errs.append("grid dimensions must be positive")
    if not (scenario.ego_size[0] > 0 and scenario.ego_size[1] > 0):
        errs.append("ego_size must be positive")
    seen = set()
    for i, ag in enumerate(scenario.agents):
        p = f"agents[{i}]"
        if ag.id in seen:
            errs.append(f"{p}: duplicate agent id {ag.id}")
        seen.add(ag.id)
        if not (ag.length > 0 and ag.width > 0):
            errs.append(f"{p} ({ag.id}): length and width must be > 0")
        if not all(math.isfinite(v) for v in ag.initial) or ag.initial[3] < 0:
            errs.append(f"{p} ({ag.id}): initial state must be finite with v >= 0")
        if ag.cls not in AGENT_CLASSES:
            errs.append(f"{p} ({ag.id}): unknown class {ag.cls!r}")
        if not np.all(np.isfinite(ag.commands)):
            errs.append(f"{p} ({ag.id}): non-finite commands")
    for i, lm in enumerate(scenario.landmarks):
        p = f"landmarks[{i}]"
        if lm.label not in LANDMARK_LABELS:
            errs.append(f"{p}: unknown label {lm.label!r}")
        if len(lm.points) < 2:
            errs.append(f"{p}: needs at least 2 points")
        if lm.label == "stop_line" and lm.state not in LIGHT_STATES:
            errs.append(f"{p}: unknown light state {lm.state!r}")
    for i, poly in enumerate(scenario.static_obstacles):
        if len(poly) < 3:
            errs.append(f"static_obstacles[{i}]: polygon needs at least 3 vertices")
    if scenario.goal_s is not None and not scenario.goal_s > 0:
        errs.append("goal_s must be > 0")
    return errs


def validate_scenario(scenario: Scenario) -> Scenario:
    """Return ``scenario`` unchanged, or raise with every violated invariant."""
    errs = scenario_errors(scenario)
    if errs:
        raise ScenarioValidationError(errs)
    return scenario


@dataclass(frozen=True, eq=False)
class CandidateSet:
    candidates: tuple[Trajectory, ...] = ()
    warning: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i: int) -> Trajectory:
        return self.candidates[i]

    @property
    def provenance(self) -> dict[str, int]:
        return dict(Counter(c.source for c in self.candidates))

    def __add__(self, other: "CandidateSet") -> "CandidateSet":
        warning = "; ".join(w for w in (self.warning, other.warning) if w)
        return CandidateSet(self.candidates + other.candidates, warning)

    @classmethod
    def concat(cls, sets: Iterable["CandidateSet"]) -> "CandidateSet":
        out = cls()
        for s in sets:
            out = out + s
        return out


# -- scenario (de)serialisation ------------------------------------------------


def _ego_to_dict(e: EgoState) -> dict[str, Any]:
    return {
        "x": e.x, "y": e.y, "heading": e.heading, "v": e.v, "a": e.a,
        "steering": e.steering, "wheelbase": e.wheelbase, "curvature": e.curvature,
    }


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "name": s.name,
        "description": s.description,
        "duration": s.duration,
        "ego_init": _ego_to_dict(s.ego_init),
        "ego_size": list(s.ego_size),
        "route": {
            "points": s.route.points.tolist(),
            "source": s.route.source,
            "target_speed": s.route.target_speed,
        },
        "goal_s": s.goal_s,
        "agents": [
            {
                "id": a.id, "initial": list(a.initial), "commands": a.commands.tolist(),
                "length": a.length, "width": a.width, "cls": a.cls, "wheelbase": a.wheelbase,
            }
            for a in s.agents
        ],
        "landmarks": [
            {"points": lm.points.tolist(), "label": lm.label, "state": lm.state, "id": lm.id}
            for lm in s.landmarks
        ],
        "static_obstacles": [p.tolist() for p in s.static_obstacles],
        "grid": {"rows": s.grid.rows, "cols": s.grid.cols, "resolution": s.grid.resolution},
    }


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    version = d.get("format_version")
    if version != SCENARIO_FORMAT_VERSION:
        raise ScenarioValidationError([f"unsupported format_version {version!r}"])
    try:
        ego = EgoState(**d["ego_init"])
        route = Route(np.asarray(d["route"]["points"], float), d["route"].get("source", "lane_center"),
                      float(d["route"].get("target_speed", 10.0)))
        agents = tuple(
            AgentScript(
                a["id"], tuple(a["initial"]), np.asarray(a.get("commands", []), float).reshape(-1, 2),
                a.get("length", EGO_LENGTH), a.get("width", EGO_WIDTH), a.get("cls", "vehicle"),
                a.get("wheelbase", WHEELBASE),
            )
            for a in d.get("agents", [])
        )
        landmarks = tuple(
            Landmark(np.asarray(lm["points"], float), lm.get("label", "lane_center"),
                     lm.get("state", "permitted"), lm.get("id", ""))
            for lm in d.get("landmarks", [])
        )
        grid = ScenarioGrid(**d.get("grid", {}))
        return Scenario(
            name=d.get("name", "scenario"),
            ego_init=ego,
            route=route,
            duration=float(d["duration"]),
            agents=agents,
            landmarks=landmarks,
            static_obstacles=tuple(np.asarray(p, float) for p in d.get("static_obstacles", [])),
            grid=grid,
            ego_size=tuple(d.get("ego_size", (EGO_LENGTH, EGO_WIDTH))),
            goal_s=d.get("goal_s"),
            description=d.get("description", ""),
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioValidationError([f"malformed scenario: {exc!r}"]) from exc


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True)


def loads_scenario(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(s))


def load_scenario(path: str | Path) -> Scenario:
    return loads_scenario(Path(path).read_text())
