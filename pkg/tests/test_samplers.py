import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapfree.config import LimitsConfig, SamplerConfig
from mapfree.core import CandidateSet, EgoState, Trajectory
from mapfree.geometry import ReferenceLine, steering_from_curvature
from mapfree.samplers import (build_expert_db, build_st_graph, curve_sampler, estimate_kinematics,
                              kinematic_filter, lattice_sampler, load_expert_db, retrieval_sampler,
                              save_expert_db)
from mapfree.samplers.curve import speed_profile
from mapfree.samplers.kinematics import violates
from mapfree.samplers.retrieval import ExpertDBError, bin_key, initial_state
from mapfree.samplers.stgraph import first_blocking, point_obstacle_band

from helpers import random_expert_trajectory

ONLY = dict(straight_accels=[], circle_steering=[], clothoid_scales=[])


def _cfg(**kw):
    return SamplerConfig(**{**ONLY, **kw})


def _straight_ref(length=200.0):
    return ReferenceLine(np.array([[0.0, 0.0], [length, 0.0]]))


def test_straight_constant_speed_covers_v_t():
    ego = EgoState(2.0, 3.0, 0.4, 10.0)
    cs = curve_sampler(ego, _cfg(straight_accels=[0.0]))
    tr = cs[0]
    d = np.linalg.norm(tr.xy - [2.0, 3.0], axis=1)
    assert np.allclose(d, np.arange(1, 31))
    assert np.allclose(tr.heading, 0.4)
    assert tr.source == "curve" and tr.maneuver == "lane_keep"


def test_braking_stops_and_holds():
    v, d = speed_profile(4.0, -4.0, 0.1 * np.arange(1, 31))
    assert v[-1] == 0.0 and d[-1] == pytest.approx(2.0)
    cs = curve_sampler(EgoState(0, 0, 0, 4.0), _cfg(straight_accels=[-4.0]))
    assert cs[0].maneuver == "stop"


def test_circle_heading_change():
    ego = EgoState(0.0, 0.0, 0.0, 10.0)
    phi = steering_from_curvature(0.05, ego.wheelbase)
    tr = curve_sampler(ego, _cfg(circle_steering=[phi], circle_accels=[0.0]))[0]
    assert tr.heading[-1] == pytest.approx(1.5)
    # every point lies on the circle of radius 20 centred at (0, 20)
    assert np.allclose(np.linalg.norm(tr.xy - [0.0, 20.0], axis=1), 20.0)


def test_clothoid_curvature_monotone_and_starts_at_ego():
    ego = EgoState(1.0, -1.0, 0.2, 8.0, curvature=0.01)
    cs = curve_sampler(ego, _cfg(clothoid_scales=[40.0], clothoid_accels=[0.0]))
    assert len(cs) == 2
    for tr in cs:
        k = estimate_kinematics(tr).curvature
        assert np.all(np.diff(k) * np.sign(k[-1]) > 0)
        assert np.linalg.norm(tr.xy[0] - [1.0, -1.0]) == pytest.approx(0.8, abs=1e-3)


def test_default_curve_sweep_size_and_empty_warning():
    cfg = SamplerConfig()
    n = len(cfg.straight_accels) + len(cfg.circle_steering) * len(cfg.circle_accels) \
        + 2 * len(cfg.clothoid_scales) * len(cfg.clothoid_accels)
    assert len(curve_sampler(EgoState(0, 0, 0, 5.0))) == n
    empty = curve_sampler(EgoState(0, 0, 0, 5.0), _cfg())
    assert len(empty) == 0 and empty.warning


# ---- s-t graph


def _lead(speed, s0=20.0):
    t = 0.1 * np.arange(1, 31)
    x = s0 + speed * t
    return Trajectory.from_arrays(x, np.zeros(30), np.zeros(30), np.full(30, speed))


def test_static_point_band():
    b = point_obstacle_band(20.0, 3.0)
    assert np.allclose(b.lower, 17.0) and np.allclose(b.upper, 23.0)


def test_static_polygon_band_and_first_blocking():
    poly = np.array([[19.0, -1.0], [21.0, -1.0], [21.0, 1.0], [19.0, 1.0]])
    g = build_st_graph(_straight_ref(), 0.0, static_polygons=[poly], ego_size=(4.0, 2.0), min_gap=1.0)
    b = g.bands[0]
    assert b.static and np.allclose(b.lower, 16.0) and np.allclose(b.upper, 24.0)
    assert first_blocking(g, 0.0) is b
    far = np.array([[19.0, 9.0], [21.0, 9.0], [21.0, 10.0]])
    assert build_st_graph(_straight_ref(), 0.0, static_polygons=[far]).bands == ()


def test_moving_lead_band_slope():
    g = build_st_graph(_straight_ref(), 0.0, [("lead", _lead(5.0), 4.0, 2.0)])
    b = g.bands[0]
    assert np.allclose(np.diff(b.lower), 0.5) and np.allclose(np.diff(b.upper), 0.5)
    assert b.speed == pytest.approx(5.0)
    s_mid = 0.5 * (b.lower[10] + b.upper[10])
    assert g.region(s_mid, 10, 0) == "occupied"
    assert g.region(b.lower[10] - 0.1, 10, 0) == "follow"
    assert g.region(b.upper[10] + 0.1, 10, 0) == "overtake"
    assert g.collides(np.full(30, s_mid)) and not g.collides(np.zeros(30))
    with pytest.raises(ValueError):
        build_st_graph(_straight_ref(), 0.0, min_gap=-1.0)


def test_lateral_agent_not_in_corridor():
    lead = _lead(5.0)
    side = Trajectory(lead.waypoints + [0, 0, 6.0, 0, 0])
    assert build_st_graph(_straight_ref(), 0.0, [("side", side, 4.0, 2.0)]).bands == ()


# ---- lattice


def test_lattice_contains_cruise_at_target():
    ego = EgoState(0.0, 0.0, 0.0, 10.0)
    cs = lattice_sampler(ego, _straight_ref(), 10.0)
    t = 0.1 * np.arange(1, 31)
    best = min(np.max(np.abs(tr.xy - np.column_stack([10 * t, 0 * t]))) for tr in cs)
    assert best < 1e-9
    assert all(tr.source == "lattice" for tr in cs)


def test_lattice_stops_before_stop_line():
    ego = EgoState(0.0, 0.0, 0.0, 8.0)
    cs = lattice_sampler(ego, _straight_ref(), 8.0, stop_s=15.0)
    stops = [tr for tr in cs if tr.label.startswith("stop s=")]
    assert stops
    for tr in stops:
        assert tr.xy[:, 0].max() <= 15.0 + 0.05
        if float(tr.label.split("T=")[1].split()[0]) <= 3.0:
            assert tr.v[-1] == pytest.approx(0.0, abs=1e-9)


def test_lattice_follow_and_overtake_avoid_band():
    ego = EgoState(0.0, 0.0, 0.0, 15.0)
    ref = _straight_ref()
    # a slower agent cuts into the ego lane at t = 2 s, ahead of the ego
    t = 0.1 * np.arange(1, 31)
    cut_in = Trajectory.from_arrays(10 + 5 * t, np.where(t < 1.95, -3.5, 0.0), 0 * t, np.full(30, 5.0))
    g = build_st_graph(ref, 0.0, [("cut", cut_in, 4.0, 2.0)])
    assert not g.bands[0].present()[0] and g.bands[0].present()[-1]
    cs = lattice_sampler(ego, ref, 15.0, graph=g, filter_kinematics=False)
    kinds = {tr.label.split()[0] for tr in cs}
    assert {"follow", "overtake"} <= kinds
    for tr in cs:
        if tr.label.split()[0] in ("follow", "overtake"):
            s, _ = ref.project(tr.xy)
            assert not g.collides(s)
    with pytest.raises(ValueError):
        lattice_sampler(ego, ref, -1.0)


def test_lattice_respects_reference_end():
    cs = lattice_sampler(EgoState(0.0, 0.0, 0.0, 10.0), _straight_ref(20.0), 10.0)
    assert len(cs) == 0 or all(tr.xy[:, 0].max() <= 20.0 + 1e-6 for tr in cs)


# ---- kinematics


def test_kinematic_filter_removes_violator():
    t = 0.1 * np.arange(1, 31)
    ok = Trajectory.from_arrays(10 * t, 0 * t, 0 * t, np.full(30, 10.0), origin=(0, 0, 0, 10))
    v = 10 + 100 * t
    bad = Trajectory.from_arrays(np.cumsum(v) * 0.1, 0 * t, 0 * t, v, origin=(0, 0, 0, 10))
    kept = kinematic_filter(CandidateSet([ok, bad]))
    assert len(kept) == 1 and kept[0] is ok
    assert violates(bad, LimitsConfig()) == "accel"
    assert np.allclose(estimate_kinematics(bad).accel, 100.0)
    with pytest.raises(ValueError):
        kinematic_filter(CandidateSet([ok]), LimitsConfig(max_jerk=0.0))


def test_kinematic_filter_matches_bruteforce(rng):
    cs = curve_sampler(EgoState(0, 0, 0.3, 12.0, a=0.5, curvature=0.02))
    lim = LimitsConfig()

    def feasible(tr):
        xy = np.vstack([tr.origin[:2], tr.xy])
        h = np.concatenate([[tr.origin[2]], tr.heading])
        v = np.concatenate([[tr.origin[3]], tr.v])
        a = np.diff(v) / 0.1
        j = np.diff(a) / 0.1
        ds = np.hypot(*np.diff(xy, axis=0).T)
        dh = (np.diff(h) + math.pi) % (2 * math.pi) - math.pi
        k = np.where(ds > 1e-3, dh / np.maximum(ds, 1e-3), 0.0)
        vm = 0.5 * (v[1:] + v[:-1])
        return (np.all(np.abs(a) <= lim.max_accel) and np.all(np.abs(j) <= lim.max_jerk)
                and np.all(np.abs(k) <= lim.max_curvature) and np.all(np.abs(vm**2 * k) <= lim.max_lat_accel))

    kept = {id(t) for t in kinematic_filter(cs, lim)}
    assert kept == {id(t) for t in cs if feasible(t)}
    assert 0 < len(kept) < len(cs)


# ---- retrieval


def test_bin_key_edges():
    assert bin_key((0.03, 0.5, -0.01), (0.01, 0.5, 0.01)) == (3, 1, -1)
    assert bin_key((2.999, 0.0, 0.0)) == (2, 0, 0)


def test_identical_trajectories_collapse(rng):
    tr = random_expert_trajectory(rng, 10.0, 0.0, 0.0)
    db = build_expert_db([tr, tr, tr])
    assert len(db) == 1


def test_initial_state_recovered(rng):
    tr = random_expert_trajectory(rng, 7.0, 1.0, 0.05)
    v0, a0, k0 = initial_state(tr)
    assert v0 == 7.0 and a0 == pytest.approx(1.0) and k0 == pytest.approx(0.05, rel=1e-3)
    with pytest.raises(ExpertDBError):
        initial_state(Trajectory(tr.waypoints))


def test_distance_threshold_is_strict(rng):
    db = build_expert_db([random_expert_trajectory(rng, 10.0, 0.0, 0.0)])
    s = db.states[0]
    assert len(db.query(s + [1.0, 0, 0])) == 0
    assert len(db.query(s + [0.999, 0, 0])) == 1
    assert len(db.query(s + [0, 0.19, 0])) == 1 and len(db.query(s + [0, 0.2, 0])) == 0


@settings(max_examples=20, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-30, 30), st.floats(-30, 30))
def test_retrieval_places_at_ego(h, x, y):
    tr = random_expert_trajectory(np.random.default_rng(3), 10.0, 0.0, 0.0)
    db = build_expert_db([tr])
    ego = EgoState(x, y, h, 10.0)
    placed = retrieval_sampler(ego, db)[0]
    d0 = np.linalg.norm(tr.xy[0] - tr.origin[:2])
    assert np.linalg.norm(placed.xy[0] - [x, y]) == pytest.approx(d0, abs=1e-9)
    assert placed.source == "retrieval"
    seg = np.diff(np.vstack([tr.origin[:2], tr.xy]), axis=0)
    seg_p = np.diff(np.vstack([[x, y], placed.xy]), axis=0)
    assert np.allclose(np.linalg.norm(seg, axis=1), np.linalg.norm(seg_p, axis=1))


def test_retrieval_empty_warns(rng):
    db = build_expert_db([random_expert_trajectory(rng, 10.0, 0.0, 0.0)])
    cs = retrieval_sampler(EgoState(0, 0, 0, 30.0), db)
    assert len(cs) == 0 and cs.warning


def test_expert_db_save_load(tmp_path, rng):
    trajs = [random_expert_trajectory(rng, rng.uniform(3, 12), rng.uniform(-1, 1), rng.uniform(-0.05, 0.05))
             for _ in range(30)]
    db = build_expert_db(trajs)
    save_expert_db(db, tmp_path / "db.bin", "abc")
    back = load_expert_db(tmp_path / "db.bin")
    assert len(back) == len(db)
    assert np.array_equal(back.states, db.states) and np.array_equal(back.bins, db.bins)
    assert all(np.array_equal(a.waypoints, b.waypoints) for a, b in zip(back.trajectories, db.trajectories))
    raw = (tmp_path / "db.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ExpertDBError):
        load_expert_db(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:10])
    with pytest.raises(ExpertDBError):
        load_expert_db(tmp_path / "short.bin")


def test_build_errors(rng):
    with pytest.raises(ExpertDBError):
        build_expert_db([])
    tr = random_expert_trajectory(rng, 10.0, 0.0, 0.0)
    with pytest.raises(ExpertDBError):
        build_expert_db([tr], bin_sizes=(0, 1, 1))
    with pytest.raises(ExpertDBError):
        build_expert_db([tr], max_clusters=0)
