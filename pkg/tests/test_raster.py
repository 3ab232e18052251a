import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from mapfree.core import AgentTrack, EgoState, Landmark, Route
from mapfree.raster import (CHANNELS, GridGeometry, OccupancyGrid, OutOfGridError, RasterExtentError, SceneFrame,
                            export_raster, fade_brightness, fill_polygon, inflate, occupancy_cost_field,
                            polyline_cells, rasterize_scene, read_pgm, write_pgm)

SMALL = GridGeometry(60, 80, 0.2, (0.0, 0.0))


def _agent(x=5.0, y=4.0, n=1, v=0.0):
    hist = np.array([[0.1 * k, x + v * 0.1 * k, y, 0.0, v] for k in range(n)])
    return AgentTrack("a", 2.0, 1.0, hist)


def test_default_raster_shape_and_channels():
    r = rasterize_scene(SceneFrame(EgoState(0, 0, 0, 0)))
    assert r.data.shape == (500, 500, 5)
    assert r.channels == CHANNELS


def test_empty_scene_has_only_the_ego():
    far = EgoState(1000.0, 1000.0, 0.0, 0.0)
    r = rasterize_scene(SceneFrame(far), SMALL)
    assert not r.data.any()


def test_single_agent_brightness_one():
    r = rasterize_scene(SceneFrame(EgoState(-100, -100, 0, 0), agents=(_agent(),)), SMALL)
    ch = r.channel("agents")
    assert ch.max() == 1.0
    # 2 m x 1 m box -> about 50 cells of 0.04 m^2
    assert abs(np.count_nonzero(ch) * 0.04 - 2.0) < 0.3


def test_history_fades_linearly():
    assert np.allclose(fade_brightness([0, 1, 14, 20, 25]), [1.0, 0.95, 0.30, 0.0, 0.0])
    r = rasterize_scene(SceneFrame(EgoState(-100, -100, 0, 0), agents=(_agent(x=2.0, n=3, v=30.0),)), SMALL)
    ch = r.channel("agents")
    assert set(np.unique(ch)) <= {0.0, 0.9, 0.95, 1.0}
    assert ch[SMALL.world_to_cell((2.0, 4.0))] == pytest.approx(0.9)


def test_world_to_cell_examples():
    g = SMALL
    assert g.world_to_cell(g.origin) == (0, 0)
    r, c = g.world_to_cell((3.0, 2.0))
    assert g.world_to_cell((3.2, 2.0)) == (r, c + 1)
    assert g.world_to_cell((3.0, 2.2)) == (r + 1, c)
    assert np.allclose(g.cell_to_world(r, c), (3.0, 2.0))
    with pytest.raises(OutOfGridError):
        g.world_to_cell((-5.0, 0.0))
    with pytest.raises(ValueError):
        g.world_to_cell((np.nan, 0.0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 59), st.integers(0, 79), st.floats(-0.099, 0.099), st.floats(-0.099, 0.099))
def test_cell_round_trip_property(r, c, dx, dy):
    p = SMALL.cell_to_world(r, c) + [dx, dy]
    assert SMALL.world_to_cell(p) == (r, c)


def test_default_grid_is_centred():
    g = GridGeometry()
    assert g.world_to_cell((0.0, 0.0)) in {(249, 249), (249, 250), (250, 249), (250, 250)}
    xmin, xmax, ymin, ymax = g.extent
    assert abs((xmax - xmin) - 100.0) < 1e-9 and abs((ymax - ymin) - 100.0) < 1e-9


def test_occupancy_inflation_decays_linearly():
    g = GridGeometry(41, 41, 0.2, (-4.0, -4.0))
    occ = OccupancyGrid(g, np.zeros(g.shape, np.uint8))
    labels = occ.labels.copy()
    labels[20, 20] = 1
    cost = occupancy_cost_field(OccupancyGrid(g, labels), 1.0)
    assert cost[20, 20] == 1.0
    assert cost[20, 23] == pytest.approx(0.4)   # 0.6 m away
    assert cost[20, 26] == 0.0


def test_inflate_against_distance_transform():
    rng = np.random.default_rng(0)
    mask = rng.uniform(size=(50, 50)) < 0.01
    dist = ndimage.distance_transform_edt(~mask) * 0.2
    assert np.allclose(inflate(mask, 0.2, 1.5), np.clip(1 - dist / 1.5, 0, 1))


def test_movable_cells_can_be_excluded():
    labels = np.zeros(SMALL.shape, np.uint8)
    labels[5, 5] = 2
    occ = OccupancyGrid(SMALL, labels)
    assert occupancy_cost_field(occ, 0.0, include_movable=False).sum() == 0
    assert occupancy_cost_field(occ, 0.0).sum() == 1
    with pytest.raises(ValueError):
        OccupancyGrid(SMALL, np.full(SMALL.shape, 3))
    with pytest.raises(ValueError):
        occupancy_cost_field(occ, -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_translation_equivariance(di, dj):
    res = 0.2
    scene = lambda ox, oy: SceneFrame(
        EgoState(6 + ox, 6 + oy, 0.3, 0.0), route=Route(np.array([[ox, 6 + oy], [16 + ox, 6.5 + oy]])),
        agents=(_agent(8 + ox, 3 + oy, 2, 5.0),), static_obstacles=(np.array([[2, 9], [4, 9], [4, 10], [2, 10.0]]) + [ox, oy],))
    big = GridGeometry(120, 120, res, (-4.0, -4.0))
    a = rasterize_scene(scene(0, 0), big).data
    b = rasterize_scene(scene(dj * res, di * res), big).data
    lo_i, hi_i = max(0, -di) + 2, min(120, 120 - di) - 2
    lo_j, hi_j = max(0, -dj) + 2, min(120, 120 - dj) - 2
    sub_a = a[lo_i:hi_i, lo_j:hi_j]
    sub_b = b[lo_i + di:hi_i + di, lo_j + dj:hi_j + dj]
    # shifts by whole cells move every painted cell by exactly that many cells,
    # up to round-off on cell-centre boundaries
    assert np.mean(np.abs(sub_a - sub_b) > 1e-9) < 0.002


def test_fill_polygon_counts_cell_centres():
    poly = np.array([[0.9, 0.9], [2.1, 0.9], [2.1, 1.5], [0.9, 1.5]])
    mask = fill_polygon(SMALL, poly)
    # centres at x in {1.0 .. 2.0} (6), y in {1.0 .. 1.4} (3)
    assert mask.sum() == 18


def test_polyline_cells_arc_lengths():
    r, c, arc = polyline_cells(SMALL, np.array([[1.0, 1.0], [5.0, 1.0]]))
    assert len(set(zip(r, c))) == len(r) == 21
    # arc is where the line first enters each cell: at most half a cell before its centre
    centre_arc = np.array([SMALL.cell_to_world(i, j)[0] - 1.0 for i, j in zip(r, c)])
    assert arc.min() == 0.0
    assert np.all((centre_arc - arc >= -1e-9) & (centre_arc - arc <= 0.1 + 1e-9))


def test_stop_line_states_paint_static_and_mask_route():
    route = Route(np.array([[0.0, 5.0], [15.0, 5.0]]))
    line = lambda state: Landmark(np.array([[8.0, 3.0], [8.0, 7.0]]), "stop_line", state)
    ego = EgoState(-50, -50, 0, 0)
    cell = SMALL.world_to_cell((8.0, 5.0))
    for state, value in (("permitted", 0.0), ("yield", 0.5), ("prohibited", 1.0)):
        r = rasterize_scene(SceneFrame(ego, route=route, landmarks=(line(state),)), SMALL)
        assert r.channel("static")[cell] == value
        assert r.channel("route")[cell] == (1.0 if value == 0 else 0.0)


def test_strict_mode_rejects_polygons_outside():
    frame = SceneFrame(EgoState(-100, -100, 0, 0), static_obstacles=(np.array([[500, 0], [501, 0], [501, 1.0]]),))
    assert not rasterize_scene(frame, SMALL).data.any()
    with pytest.raises(RasterExtentError):
        rasterize_scene(frame, SMALL, strict=True)


def test_pgm_round_trip_and_export(tmp_path):
    img = np.round(np.random.default_rng(1).uniform(size=(7, 9)) * 255) / 255
    write_pgm(tmp_path / "x.pgm", img, "config_hash=abc")
    assert np.allclose(read_pgm(tmp_path / "x.pgm"), img)
    assert b"# config_hash=abc" in (tmp_path / "x.pgm").read_bytes()
    r = rasterize_scene(SceneFrame(EgoState(5, 5, 0, 0)), SMALL)
    files = export_raster(r, tmp_path / "out", provenance="config_hash=abc")
    assert len(files) == 6
    assert np.allclose(read_pgm(files[2]), np.round(r.channel("ego") * 255) / 255)
