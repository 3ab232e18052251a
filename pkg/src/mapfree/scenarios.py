"""Built-in closed-loop scenario suite (all under 10 s of simulated time)."""

from __future__ import annotations

import math

import numpy as np

from .config import EGO_LENGTH, EGO_WIDTH, LANE_WIDTH
from .core import AgentScript, EgoState, Landmark, Route, Scenario

ROAD_LENGTH = 160.0


def _straight_road(x0: float = -20.0, x1: float = ROAD_LENGTH) -> tuple[Landmark, ...]:
    """Two eastbound lanes: ego lane centred on y = 0, a left lane at y = 3.5."""
    xs = np.array([x0, x1])
    h = 0.5 * LANE_WIDTH
    return (
        Landmark(np.column_stack([xs, [0.0, 0.0]]), "lane_center", id="lane0"),
        Landmark(np.column_stack([xs, [LANE_WIDTH] * 2]), "lane_center", id="lane1"),
        Landmark(np.column_stack([xs, [h, h]]), "lane_divider", id="div"),
        Landmark(np.column_stack([xs, [-h, -h]]), "road_boundary", id="right_edge"),
        Landmark(np.column_stack([xs, [LANE_WIDTH + h] * 2]), "road_boundary", id="left_edge"),
    )


def _straight_route(target: float, x0: float = -20.0, x1: float = ROAD_LENGTH) -> Route:
    return Route(np.column_stack([np.linspace(x0, x1, 19), np.zeros(19)]), "lane_center", target)


def _box(cx: float, cy: float, length: float, width: float) -> np.ndarray:
    hl, hw = 0.5 * length, 0.5 * width
    return np.array([[cx - hl, cy - hw], [cx + hl, cy - hw], [cx + hl, cy + hw], [cx - hl, cy + hw]])


def lead_brake() -> Scenario:
    """Lead vehicle 25 m ahead at 12 m/s brakes at 6 m/s^2 to a stop after 1.5 s."""
    cmds = np.zeros((80, 2))
    cmds[15:35, 0] = -6.0
    lead = AgentScript("lead", (25.0, 0.0, 0.0, 12.0), cmds)
    return Scenario("lead_brake", EgoState(0.0, 0.0, 0.0, 12.0), _straight_route(12.0), 8.0,
                    agents=(lead,), landmarks=_straight_road(), goal_s=150.0,
                    description="lead vehicle hard brake")


def static_obstacle() -> Scenario:
    """Stopped car blocking the ego lane 40 m ahead; the left lane is free."""
    return Scenario("static_obstacle", EgoState(0.0, 0.0, 0.0, 10.0), _straight_route(10.0), 9.0,
                    landmarks=_straight_road(), static_obstacles=(_box(40.0, 0.0, EGO_LENGTH, EGO_WIDTH),),
                    goal_s=150.0, description="static obstacle in lane")


def cut_in() -> Scenario:
    """A slower car in the left lane merges into the ego lane just ahead."""
    cmds = np.zeros((80, 2))
    # steer right for 1 s, then back left for 1 s: a smooth 3.5 m lane change
    cmds[5:15, 1] = -0.045
    cmds[15:25, 1] = 0.045
    cutter = AgentScript("cutter", (18.0, LANE_WIDTH, 0.0, 9.0), cmds)
    return Scenario("cut_in", EgoState(0.0, 0.0, 0.0, 12.0), _straight_route(12.0), 8.0,
                    agents=(cutter,), landmarks=_straight_road(), goal_s=150.0,
                    description="cut-in from the left lane")


def commuting_route_right_turn(radius: float = 22.0, lead_in: float = 20.0, lead_out: float = 25.0) -> np.ndarray:
    """Eastbound lead-in, quarter circle to the right, southbound exit."""
    straight = np.column_stack([np.linspace(-10.0, lead_in, 16), np.zeros(16)])
    ang = np.linspace(0.0, math.pi / 2, 25)[1:]
    arc = np.column_stack([lead_in + radius * np.sin(ang), -radius + radius * np.cos(ang)])
    exit_ = np.column_stack([np.full(10, lead_in + radius), -radius - np.linspace(0, lead_out, 11)[1:]])
    return np.vstack([straight, arc, exit_])


def right_turn() -> Scenario:
    """Map-free right turn: no lane landmarks, the route is a commuting trajectory."""
    pts = commuting_route_right_turn()
    route = Route(pts, "commuting_history", 8.0)
    goal = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))) - 15.0
    return Scenario("right_turn", EgoState(0.0, 0.0, 0.0, 8.0), route, 9.5, goal_s=goal,
                    description="map-free right turn on a commuting route")


def empty_road() -> Scenario:
    return Scenario("empty_road", EgoState(0.0, 0.0, 0.0, 10.0), _straight_route(10.0), 9.5,
                    landmarks=_straight_road(), goal_s=100.0, description="empty straight road")


SUITE = {
    "lead_brake": lead_brake,
    "static_obstacle": static_obstacle,
    "cut_in": cut_in,
    "right_turn": right_turn,
    "empty_road": empty_road,
}


def get_scenario(name: str) -> Scenario:
    try:
        return SUITE[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; built-ins: {', '.join(SUITE)}") from None


def scenario_suite() -> list[Scenario]:
    return [f() for f in SUITE.values()]
