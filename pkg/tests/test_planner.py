import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from mapfree.config import LimitsConfig, SafetyConfig
from mapfree.core import EgoState, Trajectory
from mapfree.evaluator import ConstantPlane, CostModel, FeaturePlanes, build_static_planes
from mapfree.planner import (EmptyCandidateSetError, StaticChecker, dynamic_collision, fallback_trajectory,
                             multimodal_imitation_loss, plan_deviation, safety_layer, select_best)
from mapfree.prediction import AgentForecast
from mapfree.raster import GridGeometry

from helpers import box_polygon_points

GEOM = GridGeometry(100, 200, 0.2, (-5.0, -10.0))
ROUTE = np.array([[-5.0, 0.0], [35.0, 0.0]])
EGO = EgoState(0.0, 0.0, 0.0, 8.0)


def _mask(*cells):
    m = np.zeros(GEOM.shape, bool)
    for c in cells:
        m[c] = True
    return m


def _planes(mask=None):
    st_ = build_static_planes(GEOM, _mask() if mask is None else mask, ROUTE)
    return FeaturePlanes(st_, ConstantPlane(0.0), ConstantPlane(0.0))


def _line(y=0.0, v=8.0, source="lattice"):
    t = 0.1 * np.arange(1, 31)
    # reach lateral offset y smoothly so the trajectory stays kinematically sane
    yy = y * np.clip(t / 3.0, 0, 1) ** 2 * (3 - 2 * np.clip(t / 3.0, 0, 1))
    h = np.arctan2(np.gradient(yy, t), v)
    return Trajectory.from_arrays(v * t, yy, h, np.full(30, v), source=source, origin=(0, 0, 0, v))


# wall across the lane at x = 15 .. 16, |y| < 1.6
WALL = (slice(42, 58), slice(100, 106))


def test_single_candidate_is_chosen():
    d = select_best([_line()], CostModel(), _planes())
    assert d.chosen_index == 0 and d.chosen is d.ranked[0]
    with pytest.raises(EmptyCandidateSetError):
        select_best([], CostModel(), _planes())


def test_free_beats_occupied():
    planes = _planes(_mask(WALL))
    d = select_best([_line(0.0), _line(4.0)], CostModel(alpha=10.0), planes)
    assert d.chosen.xy[-1, 1] == pytest.approx(4.0)
    # with occupancy ignored the on-route line wins instead
    d = select_best([_line(0.0), _line(4.0)], CostModel(np.array([0, 0, 1.0, 1.0, 0, 0]), 0.0, 0.0), planes)
    assert d.chosen.xy[-1, 1] == 0.0
    assert np.all(np.diff(d.costs) >= 0)


def test_ties_broken_by_source_then_order():
    a, b, c = _line(source="curve"), _line(source="lattice"), _line(source="lattice")
    d = select_best([a, b, c], CostModel(), _planes())
    assert d.ranked[0] is b and d.ranked[1] is c and d.ranked[2] is a


def test_imitation_loss_picks_closest_mode():
    gt = _line(0.0)
    shift = lambda dy: Trajectory(gt.waypoints + [0, 0, dy, 0, 0])
    assert multimodal_imitation_loss([shift(1.0), shift(2.0)], gt) == (pytest.approx(1.0), 0)
    assert multimodal_imitation_loss([shift(2.0), shift(-1.0)], gt) == (pytest.approx(1.0), 1)
    with pytest.raises(ValueError):
        multimodal_imitation_loss([], gt)


def test_safety_skips_colliding_best():
    mask = _mask(WALL)
    # the model ignores occupancy, so the blocked straight line ranks first
    model = CostModel(np.array([0, 0, 1.0, 1.0, 0, 0]), 0.0, 0.0)
    d = select_best([_line(0.0), _line(4.0)], model, _planes(mask))
    assert d.ranked[0].xy[-1, 1] == 0.0
    out = safety_layer(d, EGO, StaticChecker(GEOM, mask, 0.15))
    assert out.verdicts[0] == "static" and out.verdicts[1] == "ok"
    assert out.chosen_index == 1 and not out.fallback


def test_zero_consistency_weight_matches_select_best():
    d = select_best([_line(y) for y in (0.0, 0.5, 1.0, 1.5)], CostModel(), _planes())
    prev = _line(1.5)
    first = d.ranked[0]
    out = safety_layer(d, EGO, None, previous=prev, config=SafetyConfig(consistency_weight=0.0))
    assert out.chosen is first and out.reserved == [0, 1, 2]
    assert out.verdicts[3] is None


def test_consistency_prefers_previous_plan():
    d = select_best([_line(y) for y in (0.0, 0.5, 1.0)], CostModel(), _planes())
    prev = Trajectory(np.vstack([[[0, 0, 0, 0, 8]], d.ranked[2].waypoints[:-1]]))
    out = safety_layer(d, EGO, None, previous=prev, config=SafetyConfig(consistency_weight=1e3))
    assert out.chosen is d.ranked[2]
    assert out.consistency == pytest.approx(plan_deviation(d.ranked[2], prev))


def test_fallback_when_everything_fails():
    d = select_best([_line(0.0)], CostModel(), _planes())
    out = safety_layer(d, EGO, StaticChecker(GEOM, _mask(WALL), 0.15))
    assert out.fallback and out.chosen_index is None and out.reserved == []
    assert out.chosen.label == "fallback"
    assert out.chosen.v[-1] == 0.0 and out.chosen.xy[-1, 0] == pytest.approx(8.0)


def test_kinematic_verdict():
    t = 0.1 * np.arange(1, 31)
    jerky = Trajectory.from_arrays(8 * t, 0 * t, 0 * t, 8 + 20 * t, origin=(0, 0, 0, 8))
    out = safety_layer(select_best([jerky], CostModel(), _planes()), EGO, None, limits=LimitsConfig())
    assert out.verdicts[0] == "kinematics:accel" and out.fallback


def test_fallback_trajectory_profile():
    f = fallback_trajectory(EgoState(1.0, 2.0, np.pi / 2, 6.0), 4.0)
    assert np.allclose(f.xy[:, 0], 1.0)
    assert f.xy[-1, 1] == pytest.approx(2.0 + 36 / 8)
    assert np.all(np.diff(f.v) <= 0) and f.v[-1] == 0


def test_static_checker_margin():
    cell = (50, 115)  # (18.0, 0.0)
    chk = StaticChecker(GEOM, _mask(cell), 0.15)
    p = GEOM.cell_to_world(*cell)
    traj = lambda x: Trajectory.from_arrays(np.full(30, x), np.zeros(30), np.zeros(30), np.zeros(30))
    assert chk.collides(traj(p[0] - 2.4 - 0.1), 4.8, 1.9)
    assert not chk.collides(traj(p[0] - 2.4 - 0.2), 4.8, 1.9)
    assert not StaticChecker(GEOM, _mask(), 0.15).collides(traj(0.0), 4.8, 1.9)


@settings(max_examples=40, deadline=None)
@given(st.floats(2, 20), st.floats(-4, 4), st.floats(-np.pi, np.pi), st.floats(0, 6))
def test_dynamic_collision_matches_shapely(x, y, h, v):
    ego = _line(0.0)
    t = 0.1 * np.arange(1, 31)
    other = Trajectory.from_arrays(x + v * np.cos(h) * t, y + v * np.sin(h) * t, np.full(30, h), np.full(30, v))
    fc = AgentForecast("b", other, 4.0, 1.8)
    got = dynamic_collision(ego, [fc], 4.8, 1.9, 0.5, 0.3)
    want = any(Polygon(box_polygon_points(*ego.xy[k], ego.heading[k], 5.8, 2.5)).intersects(
        Polygon(box_polygon_points(*other.xy[k], h, 4.0, 1.8))) for k in range(30))
    assert (got == "b") == want
