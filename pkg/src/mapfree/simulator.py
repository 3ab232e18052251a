"""Closed-loop harness: a kinematic-bicycle ego tracking the planner's
output with pure pursuit, scripted agents, event detection and metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import DT, HISTORY_STEPS, RunConfig
from .core import AgentTrack, CandidateSet, EgoState, Scenario, Trajectory, validate_scenario
from .evaluator import CostModel, FeaturePlanes, build_static_planes, polyline_arc_of, reference_progress
from .evaluator import ConstantPlane
from .generative import PlanningContext, ToyGenerator, sample_generator
from .geometry import (ReferenceLine, box_corners, convex_overlap, curvature_from_steering, polyline_distance,
                       steering_from_curvature, wrap_angle)
from .planner import EmptyCandidateSetError, PlannerDecision, StaticChecker, safety_layer, select_best
from .prediction import AgentForecast, forecast_agents
from .raster import GridGeometry, fill_polygon, stop_line_polygon
from .samplers import curve_sampler, kinematic_filter, lattice_sampler, retrieval_sampler
from .samplers.retrieval import ExpertTrajectoryDB
from .samplers.stgraph import StGraph, build_st_graph

TRACE_FORMAT_VERSION = 1
TRACE_COLUMNS = ("step", "t", "x", "y", "heading", "v", "a", "steering", "route_s", "chosen", "source",
                 "cost", "n_candidates", "fallback", "events")

MAX_ACCEL = 4.0
MAX_DECEL = 8.0
MAX_STEER = 0.6
LOOKAHEAD_TIME = 0.6
MIN_LOOKAHEAD = 2.0
DEVIATION_THRESHOLD = 2.5
LOST_CONTROL_THRESHOLD = 1.5
DISCOMFORT_LAT_ACCEL = 3.0
DISCOMFORT_JERK = 5.0
DISCOMFORT_STEPS = 3
GRID_MARGIN = 40.0


# -- vehicle models ----------------------------------------------------------------------

def bicycle_step(x: float, y: float, h: float, v: float, a: float, phi: float, wheelbase: float,
                 dt: float = DT) -> tuple[float, float, float, float]:
    """Exact integration of the kinematic bicycle over ``dt`` with constant
    acceleration and steering; speed stops at zero."""
    kappa = curvature_from_steering(phi, wheelbase)
    v1 = v + a * dt
    if v1 < 0:
        d = v * v / (-2.0 * a) if a < 0 else 0.0
        v1 = 0.0
    else:
        d = v * dt + 0.5 * a * dt * dt
    if abs(kappa) < 1e-12:
        return x + d * math.cos(h), y + d * math.sin(h), h, v1
    h1 = h + kappa * d
    return (x + (math.sin(h1) - math.sin(h)) / kappa, y + (math.cos(h) - math.cos(h1)) / kappa,
            float(wrap_angle(h1)), v1)


def _lookahead_point(path: np.ndarray, heading_end: float, dist: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if dist >= cum[-1]:
        extra = dist - cum[-1]
        return path[-1] + extra * np.array([math.cos(heading_end), math.sin(heading_end)])
    i = int(np.searchsorted(cum, dist, side="right") - 1)
    f = (dist - cum[i]) / max(seg[i], 1e-12)
    return path[i] + f * (path[i + 1] - path[i])


def track(ego: EgoState, plan: Trajectory, dt: float = DT) -> tuple[float, float]:
    """Pure pursuit steering plus speed matching; returns (accel, steering)."""
    a = float(np.clip((plan.v[0] - ego.v) / dt, -MAX_DECEL, MAX_ACCEL))
    path = np.vstack([[ego.x, ego.y], plan.xy])
    ld = max(LOOKAHEAD_TIME * ego.v, MIN_LOOKAHEAD)
    target = _lookahead_point(path, float(plan.heading[-1]), ld)
    rel = target - (ego.x, ego.y)
    alpha = math.atan2(rel[1], rel[0]) - ego.heading
    dist = max(float(np.hypot(*rel)), 1e-6)
    kappa = 2.0 * math.sin(alpha) / dist
    phi = float(np.clip(steering_from_curvature(kappa, ego.wheelbase), -MAX_STEER, MAX_STEER))
    return a, phi


# -- planner pipeline ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlanningFrame:
    ego: EgoState
    forecasts: list[AgentForecast]
    graph: StGraph
    planes: FeaturePlanes


@dataclass(eq=False)
class ScenePlanner:
    """Per-scenario planning pipeline; static planes and checkers are built once."""

    scenario: Scenario
    config: RunConfig = field(default_factory=RunConfig)
    model: CostModel = field(default_factory=CostModel)
    expert_db: ExpertTrajectoryDB | None = None
    generator: ToyGenerator | None = None
    margin: float = GRID_MARGIN  # world grid padding around route, ego and obstacles

    def __post_init__(self) -> None:
        sc = self.scenario
        res = self.config.grid.resolution
        pts = [sc.route.points, [[sc.ego_init.x, sc.ego_init.y]]] + [p for p in sc.static_obstacles]
        allp = np.vstack(pts)
        lo = allp.min(axis=0) - self.margin
        hi = allp.max(axis=0) + self.margin
        cols = int(math.ceil((hi[0] - lo[0]) / res)) + 1
        rows = int(math.ceil((hi[1] - lo[1]) / res)) + 1
        self.geometry = GridGeometry(rows, cols, res, (float(lo[0]), float(lo[1])))
        mask = np.zeros(self.geometry.shape, bool)
        soft = np.zeros(self.geometry.shape, bool)
        for poly in sc.static_obstacles:
            fill_polygon(self.geometry, poly, mask)
        self.ref = ReferenceLine(sc.route.points)
        self.stop_s = None
        for lm in sc.landmarks:
            if lm.label != "stop_line" or lm.state == "permitted":
                continue
            fill_polygon(self.geometry, stop_line_polygon(lm.points, res), mask if lm.state == "prohibited" else soft)
            if lm.state == "prohibited":
                s, _ = self.ref.project(np.mean(lm.points, axis=0)[None, :])
                self.stop_s = float(s[0]) if self.stop_s is None else min(self.stop_s, float(s[0]))
        self.static = build_static_planes(self.geometry, mask, sc.route.points, self.config.evaluator, soft)
        self.checker = StaticChecker(self.geometry, mask, self.config.safety.static_margin)
        self.base_planes = FeaturePlanes(self.static, ConstantPlane(0.0), ConstantPlane(0.0))

    def st_graph(self, ego: EgoState, forecasts: Sequence[AgentForecast]):
        cfg = self.config.samplers
        fc = [(f.agent_id, f.trajectory, f.length, f.width) for f in forecasts]
        s0 = float(self.ref.project(np.array([[ego.x, ego.y]]))[0][0])
        return build_st_graph(self.ref, s0, fc, self.scenario.static_obstacles, self.scenario.ego_size,
                              cfg.st_min_gap, cfg.st_headway, cfg.st_lateral_margin)

    def candidates(self, ego: EgoState, planes: FeaturePlanes, graph) -> CandidateSet:
        cfg = self.config.samplers
        sets = []
        target = self.scenario.route.target_speed
        if cfg.lattice:
            sets.append(lattice_sampler(ego, self.ref, target, cfg, graph, self.stop_s, self.config.limits))
        if cfg.curve:
            sets.append(curve_sampler(ego, cfg))
        if cfg.retrieval and self.expert_db is not None and len(self.expert_db):
            sets.append(retrieval_sampler(ego, self.expert_db))
        if cfg.generator and self.generator is not None:
            ctx = PlanningContext(ego, self.ref, target, planes)
            sets.append(sample_generator(self.generator, ctx, cfg.generator_draws, seed=self.config.training.seed))
        return kinematic_filter(CandidateSet.concat(sets), self.config.limits)

    def context(self, ego: EgoState, agents: Sequence[AgentTrack]) -> PlanningFrame:
        """Forecasts, s-t graph and feature planes for one planning cycle."""
        forecasts = []
        if agents:
            trajs = forecast_agents(agents, [lm for lm in self.scenario.landmarks if lm.label == "lane_center"])
            forecasts = [AgentForecast(a.id, tr, a.length, a.width) for a, tr in zip(agents, trajs)]
        graph = self.st_graph(ego, forecasts)
        s_ref = reference_progress(ego, self.scenario.route.points, self.scenario.route.target_speed)
        s_ref = cap_progress(s_ref, graph)
        return PlanningFrame(ego, forecasts, graph, self.base_planes.with_dynamic(forecasts, s_ref))

    def plan(self, ego: EgoState, agents: Sequence[AgentTrack], previous: Trajectory | None) -> PlannerDecision:
        fr = self.context(ego, agents)
        cands = self.candidates(ego, fr.planes, fr.graph)
        try:
            decision = select_best(cands, self.model, fr.planes)
        except EmptyCandidateSetError:
            decision = PlannerDecision(CandidateSet([], cands.warning), np.zeros(0), np.zeros((0, 3)))
        return self.check(decision, fr, previous)

    def check(self, decision: PlannerDecision, frame: PlanningFrame,
              previous: Trajectory | None = None) -> PlannerDecision:
        return safety_layer(decision, frame.ego, self.checker, frame.forecasts, previous, self.config.safety,
                            self.config.limits, self.scenario.ego_size)


def cap_progress(s_ref: np.ndarray, graph) -> np.ndarray:
    """Keep the progress schedule behind moving obstacles occupying the
    route corridor ahead; it never drops below the current position.

    The graph and the schedule measure arc length on the same route
    (spline arc vs polyline arc differ by well under a centimetre here)."""
    out = np.asarray(s_ref, float).copy()
    s0 = graph.s0
    for b in graph.bands:
        if b.static:
            continue
        p = b.present()
        ahead = p & (np.where(p, b.lower, -np.inf) > s0)
        out[ahead] = np.minimum(out[ahead], b.lower[ahead])
    return np.maximum(out, out[0] if out[0] < s0 else s0)


# -- state, events, metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    t: float
    kind: str  # collision | deviation | lost_control | discomfort | fallback
    detail: str = ""


@dataclass(eq=False)
class SimState:
    clock: float
    step: int
    ego: EgoState
    agents: dict[str, tuple[float, float, float, float]]
    agent_history: dict[str, list[tuple[float, float, float, float, float]]]
    decision: PlannerDecision | None = None
    events: list[Event] = field(default_factory=list)
    contacts: frozenset = frozenset()
    deviated: bool = False
    lost: bool = False


def initial_state(scenario: Scenario) -> SimState:
    agents = {a.id: a.initial for a in scenario.agents}
    hist = {a.id: [(0.0,) + tuple(a.initial)] for a in scenario.agents}
    return SimState(0.0, 0, scenario.ego_init, agents, hist)


def agent_tracks(scenario: Scenario, state: SimState) -> list[AgentTrack]:
    out = []
    for a in scenario.agents:
        h = np.array(state.agent_history[a.id][-HISTORY_STEPS:])
        out.append(AgentTrack(a.id, a.length, a.width, h, a.cls))
    return out


def contacts(scenario: Scenario, ego: EgoState, agents: dict) -> set[str]:
    """Objects whose box overlaps the ego box (strict overlap)."""
    eb = box_corners(ego.x, ego.y, ego.heading, *scenario.ego_size)
    hit = set()
    for a in scenario.agents:
        x, y, h, _ = agents[a.id]
        if convex_overlap(eb, box_corners(x, y, h, a.length, a.width)):
            hit.add(a.id)
    for i, poly in enumerate(scenario.static_obstacles):
        if convex_overlap(eb, poly):
            hit.add(f"static{i}")
    return hit


def step(scenario: Scenario, state: SimState, decision: PlannerDecision) -> SimState:
    """Advance one 0.1 s step: ego tracks ``decision.chosen``, agents follow their scripts."""
    plan = decision.chosen
    ego = state.ego
    a, phi = track(ego, plan)
    x, y, h, v = bicycle_step(ego.x, ego.y, ego.heading, ego.v, a, phi, ego.wheelbase)
    a_exec = (v - ego.v) / DT
    new_ego = EgoState(x, y, h, v, a_exec, phi, ego.wheelbase)
    agents = {}
    hist = {k: list(v_) for k, v_ in state.agent_history.items()}
    for sc_agent in scenario.agents:
        ax, ay, ah, av = state.agents[sc_agent.id]
        acc, st = sc_agent.command(state.step)
        agents[sc_agent.id] = bicycle_step(ax, ay, ah, av, acc, st, sc_agent.wheelbase)
        hist[sc_agent.id].append((round(state.clock + DT, 10),) + agents[sc_agent.id])
    clock = round(state.clock + DT, 10)
    events = list(state.events)
    if decision.fallback:
        events.append(Event(clock, "fallback", decision.ranked.warning or "no validated candidate"))
    now = contacts(scenario, new_ego, agents)
    for obj in sorted(now - state.contacts):
        events.append(Event(clock, "collision", obj))
    off = float(polyline_distance([[x, y]], scenario.route.points)[0])
    deviated = off > DEVIATION_THRESHOLD
    if deviated and not state.deviated:
        events.append(Event(clock, "deviation", f"{off:.2f} m"))
    err = float(polyline_distance([[x, y]], np.vstack([[ego.x, ego.y], plan.xy]))[0])
    lost = err > LOST_CONTROL_THRESHOLD
    if lost and not state.lost:
        events.append(Event(clock, "lost_control", f"{err:.2f} m"))
    return SimState(clock, state.step + 1, new_ego, agents, hist, decision, events, frozenset(now), deviated, lost)


@dataclass(frozen=True)
class ClosedLoopMetrics:
    scenario: str
    mean_lat_accel: float
    max_lat_accel: float
    mean_jerk: float
    max_jerk: float
    mean_steer_delta: float
    collisions: int
    deviations: int
    lost_control: int
    discomfort: int
    fallbacks: int
    completion_time: float | None
    completed: bool
    distance: float
    interventions_per_km: float

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def executed_kinematics(trace: np.ndarray, dt: float = DT) -> dict[str, np.ndarray]:
    """Finite differences over an executed ``(n, 5)`` trace of x, y, heading, v, steering."""
    v = trace[:, 3]
    acc = np.diff(v) / dt
    jerk = np.diff(acc) / dt
    yaw_rate = wrap_angle(np.diff(trace[:, 2])) / dt
    lat = 0.5 * (v[1:] + v[:-1]) * yaw_rate
    steer_delta = np.abs(np.diff(trace[:, 4]))
    return {"accel": acc, "jerk": jerk, "lat_accel": lat, "steer_delta": steer_delta}


def discomfort_events(lat: np.ndarray, jerk: np.ndarray, dt: float = DT) -> list[int]:
    """Indices where |lat accel| or |jerk| starts exceeding its threshold for
    at least ``DISCOMFORT_STEPS`` consecutive samples."""
    n = max(len(lat), len(jerk) + 1)
    bad = np.zeros(n, bool)
    bad[:len(lat)] |= np.abs(lat) > DISCOMFORT_LAT_ACCEL
    bad[1:len(jerk) + 1] |= np.abs(jerk) > DISCOMFORT_JERK
    starts, run = [], 0
    for i, b in enumerate(bad):
        run = run + 1 if b else 0
        if run == DISCOMFORT_STEPS:
            starts.append(i - DISCOMFORT_STEPS + 1)
    return starts


def compute_metrics(name: str, trace: np.ndarray, events: Sequence[Event], completion_time: float | None,
                    distance: float) -> ClosedLoopMetrics:
    k = executed_kinematics(trace)

    def stat(x, f):
        return float(f(np.abs(x))) if len(x) else 0.0

    counts = {kind: sum(1 for e in events if e.kind == kind)
              for kind in ("collision", "deviation", "lost_control", "fallback")}
    disc = len(discomfort_events(k["lat_accel"], k["jerk"]))
    interventions = counts["collision"] + counts["fallback"]
    per_km = interventions / (distance / 1000.0) if distance > 1e-9 else float(interventions > 0) * math.inf
    return ClosedLoopMetrics(
        name, stat(k["lat_accel"], np.mean), stat(k["lat_accel"], np.max), stat(k["jerk"], np.mean),
        stat(k["jerk"], np.max), stat(k["steer_delta"], np.mean), counts["collision"], counts["deviation"],
        counts["lost_control"], disc, counts["fallback"], completion_time, completion_time is not None,
        distance, per_km,
    )


@dataclass(eq=False)
class SimResult:
    metrics: ClosedLoopMetrics
    rows: list[dict]
    events: list[Event]
    states: np.ndarray  # (n, 5) x, y, heading, v, steering
    decisions: list[PlannerDecision]
    config_hash: str

    def trace_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# trace_format={TRACE_FORMAT_VERSION}\n# config_hash={self.config_hash}\n")
        w = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def write_trace(self, path: str | Path) -> None:
        Path(path).write_text(self.trace_csv())


def run_closed_loop(scenario: Scenario, config: RunConfig | None = None, model: CostModel | None = None,
                    expert_db: ExpertTrajectoryDB | None = None, generator: ToyGenerator | None = None,
                    keep_decisions: bool = False) -> SimResult:
    """Replan every step until completion or the scenario duration."""
    validate_scenario(scenario)
    cfg = config or RunConfig()
    planner = ScenePlanner(scenario, cfg, model or CostModel(), expert_db, generator)
    state = initial_state(scenario)
    route = scenario.route.points
    goal = scenario.goal_s
    rows, states, decisions = [], [], []
    previous = None
    completion = None
    e = state.ego
    states.append((e.x, e.y, e.heading, e.v, e.steering))
    for _ in range(scenario.steps):
        decision = planner.plan(state.ego, agent_tracks(scenario, state), previous)
        n_before = len(state.events)
        state = step(scenario, state, decision)
        e = state.ego
        route_s = polyline_arc_of((e.x, e.y), route)
        states.append((e.x, e.y, e.heading, e.v, e.steering))
        chosen = decision.chosen
        rows.append({
            "step": state.step, "t": state.clock, "x": e.x, "y": e.y, "heading": e.heading, "v": e.v,
            "a": e.a, "steering": e.steering, "route_s": route_s, "chosen": chosen.label,
            "source": chosen.source,
            "cost": float(decision.costs[decision.chosen_index]) if decision.chosen_index is not None else "",
            "n_candidates": len(decision.ranked), "fallback": int(decision.fallback),
            "events": "|".join(f"{ev.kind}:{ev.detail}" for ev in state.events[n_before:]),
        })
        if keep_decisions:
            decisions.append(decision)
        previous = chosen
        if goal is not None and route_s >= goal:
            completion = state.clock
            break
    arr = np.array(states)
    distance = float(np.sum(np.linalg.norm(np.diff(arr[:, :2], axis=0), axis=1)))
    metrics = compute_metrics(scenario.name, arr, state.events, completion, distance)
    return SimResult(metrics, rows, list(state.events), arr, decisions, cfg.hash())


SAMPLER_COMBOS = {
    "lattice+curve": {"lattice": True, "curve": True, "retrieval": False, "generator": False},
    "lattice": {"lattice": True, "curve": False, "retrieval": False, "generator": False},
    "curve": {"lattice": False, "curve": True, "retrieval": False, "generator": False},
    "none": {"lattice": False, "curve": False, "retrieval": False, "generator": False},
}


def compare_samplers(scenarios: Sequence[Scenario], combos: dict[str, dict] | None = None,
                     config: RunConfig | None = None, **kwargs) -> list[dict]:
    """One metrics row per (combo, scenario), ordered by combo then scenario name."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    combos = combos or SAMPLER_COMBOS
    base = config or RunConfig()
    rows = []
    for name in combos:
        cfg = RunConfig(**{k: getattr(base, k) for k in base.__dataclass_fields__})
        cfg.samplers = replace(base.samplers, **combos[name])
        for sc in sorted(scenarios, key=lambda s: s.name):
            m = run_closed_loop(sc, cfg, **kwargs).metrics
            rows.append({"combo": name, **m.as_row()})
    return rows
