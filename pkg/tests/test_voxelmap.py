import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projnbv.config import RunConfig
from projnbv.geometry import CameraModel, ViewPose
from projnbv.planner import default_initial_pose, prepare_mesh
from projnbv.sensor import DepthImage, depth_to_world_cloud, render_depth
from projnbv.voxelmap import (EMPTY, FRONTIER, NONE, OCCUPIED, UNKNOWN, PoseOutsideWorkspace,
                              VoxelGrid, extract_frontiers, grow_to_cover, integrate_scan,
                              traverse_ray, update_bounding_box)

from oracles import dense_cells, brute_frontiers

ONE_PIXEL = CameraModel(fx=525, fy=525, cx=0, cy=0, width=1, height=1, depth_min=0.05, depth_max=10.0)


# --- traversal ----------------------------------------------------------------


def test_axis_aligned_ray():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [3, 1, 1])
    assert traverse_ray([0.5, 0.5, 0.5], [1, 0, 0], g) == [(0, 0, 0), (1, 0, 0), (2, 0, 0)]


def test_ray_missing_box():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [3, 3, 3])
    assert traverse_ray([-1, 5, 0.5], [1, 0, 0], g) == []
    assert traverse_ray([-1, 0.5, 0.5], [-1, 0, 0], g) == []


def test_non_unit_direction_rejected():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [3, 3, 3])
    with pytest.raises(ValueError):
        traverse_ray([0, 0, 0], [2, 0, 0], g)


def test_traverse_matches_dense_stepping():
    rng = np.random.default_rng(11)
    g = VoxelGrid.empty(0.1, [-3, 2, -4], [7, 5, 9])
    lo, hi = g.bbox
    for _ in range(1000):
        o = rng.uniform(lo - 0.5, hi + 0.5)
        target = rng.uniform(lo, hi)
        d = target - o
        d /= np.linalg.norm(d)
        if rng.random() < 0.2:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
        rng_max = np.inf if rng.random() < 0.7 else rng.uniform(0.05, 1.0)
        assert traverse_ray(o, d, g, rng_max) == dense_cells(o, d, g, rng_max)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_traversal_cells_are_face_connected(seed):
    rng = np.random.default_rng(seed)
    g = VoxelGrid.empty(0.05, rng.integers(-10, 10, 3), rng.integers(1, 12, 3))
    o = rng.uniform(g.bbox[0] - 1, g.bbox[1] + 1)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    cells = traverse_ray(o, d, g)
    assert len(set(cells)) == len(cells)
    for a, b in zip(cells[:-1], cells[1:]):
        assert sum(abs(x - y) for x, y in zip(a, b)) == 1


# --- scan integration ---------------------------------------------------------

def line_scan(camera_x, look_dir, depth):
    """A one-pixel scan along x through a 5x1x1 unit grid."""
    pose = ViewPose.look_at([camera_x, 0.5, 0.5], [camera_x + look_dir, 0.5, 0.5])
    return DepthImage(np.array([[depth]]), pose)


def test_single_ray_states():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [5, 1, 1])
    integrate_scan(g, line_scan(-0.5, 1, 4.0), ONE_PIXEL)   # hit at x = 3.5
    assert g.states[:, 0, 0].tolist() == [EMPTY, EMPTY, EMPTY, OCCUPIED, UNKNOWN]


def test_opposite_scan_precedence():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [5, 1, 1])
    integrate_scan(g, line_scan(-0.5, 1, 4.0), ONE_PIXEL)
    integrate_scan(g, line_scan(5.5, -1, 1.6), ONE_PIXEL)   # hit at x = 3.9
    assert g.states[:, 0, 0].tolist() == [EMPTY, EMPTY, EMPTY, OCCUPIED, EMPTY]


def test_occupied_is_absorbing():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [5, 1, 1])
    integrate_scan(g, line_scan(-0.5, 1, 4.0), ONE_PIXEL)
    integrate_scan(g, line_scan(-0.5, 1, np.nan), ONE_PIXEL)   # free ray through the whole line
    assert g.states[3, 0, 0] == OCCUPIED
    assert g.states[4, 0, 0] == EMPTY


def test_no_hit_ray_clears_only_to_max_depth():
    cam = CameraModel(fx=525, fy=525, cx=0, cy=0, width=1, height=1, depth_min=0.05, depth_max=2.0)
    g = VoxelGrid.empty(1.0, [0, 0, 0], [5, 1, 1])
    integrate_scan(g, line_scan(-0.5, 1, np.nan), cam)
    assert g.states[:, 0, 0].tolist() == [EMPTY, EMPTY, NONE, NONE, NONE]


def test_camera_inside_box_rejected():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [5, 1, 1])
    with pytest.raises(PoseOutsideWorkspace):
        integrate_scan(g, line_scan(2.5, 1, 1.0), ONE_PIXEL)


def test_bunny_occupied_cells_contain_cloud_points():
    cfg = RunConfig(mesh_path="data/bunny.ply", mesh_scale=0.003)
    mesh = prepare_mesh(cfg)
    cam = cfg.camera()
    img = render_depth(mesh, default_initial_pose(mesh, cfg), cam)
    cloud = depth_to_world_cloud(img, cam)
    g = VoxelGrid.covering(cloud, 0.01)
    integrate_scan(g, img, cam)
    occ = {tuple(c) for c in g.cells(OCCUPIED)}
    with_points = {tuple(c) for c in g.cell_of(cloud)}
    assert len(occ) > 100
    assert occ <= with_points
    assert g.count(EMPTY) > 0 and g.count(UNKNOWN) > 0


# --- frontiers ------------------------------------------------------------------


def test_frontier_with_empty_and_occupied_neighbors():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [3, 3, 3])
    g.states[1, 1, 1] = UNKNOWN
    g.states[0, 1, 1] = EMPTY
    g.states[2, 2, 2] = OCCUPIED
    extract_frontiers(g)
    assert g.states[1, 1, 1] == FRONTIER


def test_unknown_with_only_empty_neighbors():
    g = VoxelGrid.empty(1.0, [0, 0, 0], [3, 3, 3])
    g.states[:] = EMPTY
    g.states[1, 1, 1] = UNKNOWN
    extract_frontiers(g)
    assert g.states[1, 1, 1] == UNKNOWN


def test_frontiers_match_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(5):
        g = VoxelGrid.empty(0.1, [0, 0, 0], [20, 20, 20])
        g.states[:] = rng.choice([NONE, EMPTY, OCCUPIED, UNKNOWN, FRONTIER], size=g.shape,
                                 p=[0.2, 0.3, 0.1, 0.3, 0.1])
        expect = brute_frontiers(g.states.copy())
        got = {tuple(c) for c in extract_frontiers(g)}
        assert got == expect
        assert {tuple(c) for c in g.cells(FRONTIER)} == expect


# --- bounding box -----------------------------------------------------------------

def test_first_frame_doubles_diagonal_on_far_side():
    res = 0.2 / math.sqrt(21)   # occupied box of (1, 4, 2) cells has diagonal 0.2
    g = VoxelGrid.empty(res, [10, 0, 0], [1, 4, 2])
    g.states[:] = OCCUPIED
    view = ViewPose.look_at([-1.0, 2 * res, res], [10.0, 2 * res, res])
    out = update_bounding_box(g, 0.03, view, True)
    lo, hi = out.bbox
    assert float(np.linalg.norm(hi - lo)) == pytest.approx(0.4, rel=1e-9)
    assert out.lo.tolist() == [10, 0, 0]
    assert out.hi.tolist() == [18, 4, 2]


def test_fixed_point_without_frontiers():
    g = VoxelGrid.empty(0.01, [0, 0, 0], [6, 6, 6])
    g.states[1:5, 1:5, 1:5] = OCCUPIED
    g.states[0] = EMPTY
    out = update_bounding_box(g, 0.05, ViewPose.look_at([1, 1, 1], [0, 0, 0]), False)
    assert out is g or (np.array_equal(out.lo, g.lo) and out.shape == g.shape)


def test_corner_frontier_grows_outward_only():
    res, gamma = 0.01, 0.05
    g = VoxelGrid.empty(res, [3, -2, 7], [10, 10, 10])
    g.states[4:6, 4:6, 4:6] = OCCUPIED
    g.states[0, 0, 0] = FRONTIER
    out = update_bounding_box(g, gamma, ViewPose.look_at([1, 1, 1], [0, 0, 0]), False)
    # interval oracle: the frontier voxel's world interval widened by gamma, snapped outward
    f_lo = (g.lo + 0) * res - gamma
    expect_lo = np.floor(f_lo / res + 1e-9).astype(int)
    assert out.lo.tolist() == expect_lo.tolist() == (g.lo - 5).tolist()
    assert out.hi.tolist() == g.hi.tolist()
    # old cells keep their states at their world positions
    assert out.states[5, 5, 5] == FRONTIER
    assert out.count(OCCUPIED) == 8 and out.count(FRONTIER) == 1


def test_grow_to_cover_and_never_shrink():
    g = VoxelGrid.empty(0.1, [0, 0, 0], [2, 2, 2])
    g.states[1, 1, 1] = OCCUPIED
    g2 = grow_to_cover(g, np.array([[0.55, -0.05, 0.1]]))
    assert g2.lo.tolist() == [0, -1, 0] and g2.hi.tolist() == [6, 2, 2]
    assert g2.states[1, 2, 1] == OCCUPIED
    assert grow_to_cover(g2, np.array([[0.05, 0.05, 0.05]])) is g2


def test_update_requires_occupied():
    with pytest.raises(ValueError):
        update_bounding_box(VoxelGrid.empty(0.1, [0, 0, 0], [2, 2, 2]), 0.03,
                            ViewPose.look_at([1, 1, 1], [0, 0, 0]), True)


def test_dump_format():
    g = VoxelGrid.empty(0.5, [0, 0, 0], [2, 1, 1])
    g.states[1, 0, 0] = OCCUPIED
    lines = g.dump().splitlines()
    assert lines[0].startswith("res 0.5 bbox")
    assert lines[1:] == ["1 0 0 OCCUPIED"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounding_box_never_shrinks(seed):
    rng = np.random.default_rng(seed)
    g = VoxelGrid.empty(0.01, rng.integers(-5, 5, 3), rng.integers(3, 10, 3))
    g.states[:] = rng.choice([NONE, EMPTY, OCCUPIED, UNKNOWN, FRONTIER], size=g.shape)
    g.states[0, 0, 0] = OCCUPIED
    out = update_bounding_box(g, float(rng.uniform(0.005, 0.05)), ViewPose.look_at([1, 1, 1], [0, 0, 0]),
                              bool(rng.integers(0, 2)))
    assert np.all(out.lo <= g.lo) and np.all(out.hi >= g.hi)
    o = g.lo - out.lo
    n = np.array(g.shape)
    assert np.array_equal(out.states[o[0]:o[0] + n[0], o[1]:o[1] + n[1], o[2]:o[2] + n[2]], g.states)
