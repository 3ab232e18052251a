import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from mapfree.config import RunConfig
from mapfree.core import AgentScript, EgoState, Trajectory
from mapfree.geometry import curvature_from_steering
from mapfree.scenarios import empty_road, get_scenario
from mapfree.simulator import (SAMPLER_COMBOS, TRACE_COLUMNS, bicycle_step, compare_samplers, discomfort_events,
                               executed_kinematics, run_closed_loop, track)

from helpers import box_polygon_points

WB = 2.8


def test_straight_step():
    assert np.allclose(bicycle_step(0.0, 0.0, 0.0, 10.0, 0.0, 0.0, WB), (1.0, 0.0, 0.0, 10.0))
    x, y, h, v = bicycle_step(1.0, 2.0, math.pi / 2, 4.0, 2.0, 0.0, WB)
    assert (x, y, v) == pytest.approx((1.0, 2.0 + 0.41, 4.2))


def test_zero_speed_stays_put():
    assert bicycle_step(3.0, 4.0, 1.0, 0.0, 0.0, 0.3, WB) == (3.0, 4.0, 1.0, 0.0)
    # braking from rest never reverses
    x, y, _, v = bicycle_step(3.0, 4.0, 1.0, 0.0, -5.0, 0.0, WB)
    assert (x, y, v) == (3.0, 4.0, 0.0)
    # braking through zero stops at v^2 / 2a
    x, _, _, v = bicycle_step(0.0, 0.0, 0.0, 0.2, -4.0, 0.0, WB)
    assert v == 0.0 and x == pytest.approx(0.005)


@settings(max_examples=15, deadline=None)
@given(st.floats(1, 20), st.floats(-0.5, 0.5), st.floats(-2, 2))
def test_bicycle_matches_fine_euler(v, phi, a):
    # independent oracle: forward Euler with 200 substeps per step
    x = y = h = 0.0
    vv = v
    for _ in range(10):
        x, y, h, vv = bicycle_step(x, y, h, vv, a, phi, WB)
    xe = ye = he = 0.0
    ve = v
    dt = 5e-4
    k = 2.0 * math.tan(phi) / WB  # the curvature relation used throughout the package
    for _ in range(2000):
        xe += ve * math.cos(he) * dt
        ye += ve * math.sin(he) * dt
        he += ve * k * dt
        ve = max(ve + a * dt, 0.0)
    assert math.hypot(x - xe, y - ye) < 0.01 * max(1.0, math.hypot(xe, ye))
    assert abs(h - math.atan2(math.sin(he), math.cos(he))) <= 0.02 * max(abs(he), 0.05)


def test_constant_acceleration_has_zero_jerk():
    st_ = [(0.0, 0.0, 0.0, 5.0, 0.1)]
    for _ in range(30):
        x, y, h, v = bicycle_step(*st_[-1][:4], 1.5, 0.1, WB)
        st_.append((x, y, h, v, 0.1))
    k = executed_kinematics(np.array(st_))
    assert np.allclose(k["accel"], 1.5) and np.allclose(k["jerk"], 0.0, atol=1e-9)
    assert np.allclose(k["steer_delta"], 0.0)
    v = np.array(st_)[:, 3]
    assert np.allclose(k["lat_accel"], (0.5 * (v[1:] + v[:-1])) ** 2 * curvature_from_steering(0.1, WB), rtol=1e-6)


def test_discomfort_needs_three_consecutive_samples():
    lat = np.array([0, 4, 4, 0, 4, 4, 4, 4, 0, 0.0])
    assert discomfort_events(lat, np.zeros(9)) == [4]
    assert discomfort_events(np.zeros(10), np.array([0, 6, 6, 6, 0, 0, 0, 0, 0.0])) == [2]


def test_track_follows_plan_speed_and_side():
    ego = EgoState(0.0, 0.0, 0.0, 10.0)
    t = 0.1 * np.arange(1, 31)
    left = Trajectory.from_arrays(10 * t, 0.05 * (10 * t) ** 2, np.zeros(30), np.full(30, 10.5))
    a, phi = track(ego, left)
    assert a == pytest.approx(4.0) and phi > 0  # 5 m/s^2 requested, capped at 4


def _short(name, duration=1.0, **kw):
    return replace(empty_road(), name=name, duration=duration, **kw)


def test_compare_samplers_rows_and_fallback():
    scs = [_short("b"), _short("a")]
    combos = {k: SAMPLER_COMBOS[k] for k in ("curve", "none")}
    rows = compare_samplers(scs, combos)
    assert [(r["combo"], r["scenario"]) for r in rows] == [("curve", "a"), ("curve", "b"), ("none", "a"), ("none", "b")]
    for r in rows:
        if r["combo"] == "none":
            assert r["fallbacks"] == 10
    assert rows == compare_samplers(scs[::-1], combos)
    with pytest.raises(ValueError):
        compare_samplers([], combos)


def test_trace_rows(suite_runs):
    res = suite_runs["empty_road"]
    assert res.metrics.completed and res.metrics.collisions == 0
    assert len(res.rows) == len(res.states) - 1 == len(res.decisions)
    text = res.trace_csv()
    assert text.splitlines()[2] == ",".join(TRACE_COLUMNS)
    assert f"# config_hash={RunConfig().hash()}" in text
    assert res.metrics.interventions_per_km == 0.0


def test_collision_count_matches_shapely():
    oncoming = AgentScript("onc", (22.0, 0.0, math.pi, 8.0), np.zeros((20, 2)))
    sc = _short("head_on", 2.0, agents=(oncoming,))
    cfg = RunConfig()
    cfg.samplers = replace(cfg.samplers, **SAMPLER_COMBOS["none"])
    res = run_closed_loop(sc, cfg)
    # independent recount: contact onsets between the executed ego boxes and the agent
    ax, av = 22.0, 8.0
    onsets, touching = 0, False
    for k, (x, y, h, v, _) in enumerate(res.states[1:]):
        ax -= av * 0.1
        ego = Polygon(box_polygon_points(x, y, h, *sc.ego_size))
        other = Polygon(box_polygon_points(ax, 0.0, math.pi, oncoming.length, oncoming.width))
        now = ego.intersection(other).area > 1e-9
        onsets += now and not touching
        touching = now
    assert onsets >= 1
    assert res.metrics.collisions == onsets
    assert res.metrics.fallbacks == len(res.rows)


def test_unknown_scenario():
    with pytest.raises(KeyError):
        get_scenario("nope")
