import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avstack.common import PointCloud
from avstack.perception import (DepthImage, GridSpec, ObstacleBox, build_height_grid, cluster_obstacles,
                                depth_to_cloud, detect_obstacles, fit_box, min_area_rectangle,
                                occupied_points, reconstruct, virtual_scan_filter)
from avstack.sim import SimWorld, scenario_from_dict, sense_lidar

SPEC = GridSpec()


def cloud(pts):
    return PointCloud(np.asarray(pts, dtype=float).reshape(-1, 3))


# --- height grid ---

def test_flat_plane_has_no_occupied_cells():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 40, 2000), rng.uniform(-20, 20, 2000), np.zeros(2000)])
    assert not build_height_grid(cloud(pts)).occupied.any()


@pytest.mark.parametrize("dz, occupied", [(0.20, True), (0.10, False), (0.15, False)])
def test_height_threshold(dz, occupied):
    grid = build_height_grid(cloud([[3.02, 1.03, 0.1], [3.07, 1.08, 0.1 + dz]]))
    assert grid.occupied.sum() == int(occupied)


def test_single_point_cell_is_not_occupied():
    assert not build_height_grid(cloud([[3.0, 1.0, 2.0]])).occupied.any()


def test_points_outside_grid_are_dropped():
    grid = build_height_grid(cloud([[-1.0, 0.0, 0.0], [60.0, 0.0, 0.0], [1.0, 30.0, 0.0], [1.0, 0.0, 0.0]]))
    assert grid.dropped == 3 and grid.count.sum() == 1


def test_occupied_points_cell_centre():
    assert len(occupied_points(build_height_grid(cloud([])))) == 0
    grid = build_height_grid(cloud([[3.02, 1.03, 0.0], [3.07, 1.08, 0.5]]))
    out = occupied_points(grid)
    assert len(out) == 1
    np.testing.assert_allclose(out.xyz[0], [3.05, 1.05, 0.5], atol=1e-9)


def test_occupied_points_stay_inside_dilated_footprint():
    # a 2 m cube sampled on its faces, on flat ground
    rng = np.random.default_rng(3)
    face = rng.uniform(0, 2, (4000, 3))
    face[:1000, 0] = 0
    face[1000:2000, 0] = 2
    face[2000:3000, 1] = 0
    face[3000:, 1] = 2
    box = face + [10.0, -1.0, 0.0]
    ground = np.column_stack([rng.uniform(0, 30, 3000), rng.uniform(-10, 10, 3000), np.zeros(3000)])
    out = occupied_points(build_height_grid(cloud(np.vstack([box, ground]))))
    assert len(out) > 0
    x, y = out.xyz[:, 0], out.xyz[:, 1]
    assert np.all((x >= 10 - 0.1) & (x <= 12 + 0.1) & (y >= -1 - 0.1) & (y <= 1 + 0.1))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (60, 3), elements=st.floats(0, 3)), st.randoms(use_true_random=False))
def test_height_grid_permutation_invariant(pts, rnd):
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    a = build_height_grid(cloud(pts))
    b = build_height_grid(cloud(pts[perm]))
    np.testing.assert_array_equal(a.count, b.count)
    np.testing.assert_array_equal(a.occupied, b.occupied)
    np.testing.assert_array_equal(np.nan_to_num(a.max_z), np.nan_to_num(b.max_z))


# --- clustering ---

def _naive_dbscan(xy, eps, min_pts):
    """O(n^2) reference with the same border rule: nearest core, then smallest (x, y)."""
    n = len(xy)
    d = np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1))
    nb = d <= eps
    core = nb.sum(1) >= min_pts
    label = -np.ones(n, int)
    for i in range(n):
        if core[i] and label[i] < 0:
            stack = [i]
            label[i] = i
            while stack:
                k = stack.pop()
                for j in np.nonzero(nb[k] & core)[0]:
                    if label[j] < 0:
                        label[j] = i
                        stack.append(j)
    for b in np.nonzero(~core)[0]:
        cands = [c for c in np.nonzero(nb[b] & core)[0]]
        if cands:
            best = min(cands, key=lambda c: (d[b, c], xy[c, 0], xy[c, 1]))
            label[b] = label[best]
    return {frozenset(np.nonzero(label == lab)[0].tolist()) for lab in set(label.tolist()) - {-1}}


def test_separated_pairs_and_chain():
    pts = [[0, 0, 0], [0.1, 0, 0], [5, 0, 0], [5.1, 0, 0]]
    assert len(cluster_obstacles(cloud(pts), eps=0.5, min_pts=1)) == 2
    chain = [[0.4 * k, 0, 0] for k in range(20)]
    assert len(cluster_obstacles(cloud(chain), eps=0.5, min_pts=2)) == 1


def test_noise_is_discarded():
    pts = [[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0], [9, 9, 0]]
    groups = cluster_obstacles(cloud(pts), eps=0.5, min_pts=4)
    assert [g.tolist() for g in groups] == [[0, 1, 2, 3]]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 120), st.floats(0.5, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_clustering_matches_naive_dbscan(n, spread, min_pts, seed):
    xy = np.random.default_rng(seed).uniform(0, spread, (n, 2))
    got = {frozenset(int(i) for i in g) for g in cluster_obstacles(cloud(np.column_stack([xy, np.zeros(n)])),
                                                                    0.5, min_pts)}
    assert got == _naive_dbscan(xy, 0.5, min_pts)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 80), st.integers(0, 2**31))
def test_clustering_independent_of_order(n, seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 4, (n, 2))
    perm = rng.permutation(n)
    a = {frozenset(int(i) for i in g) for g in cluster_obstacles(cloud(np.column_stack([xy, np.zeros(n)])), 0.5, 3)}
    b = {frozenset(int(perm[i]) for i in g)
         for g in cluster_obstacles(cloud(np.column_stack([xy[perm], np.zeros(n)])), 0.5, 3)}
    assert a == b


def test_cluster_parameter_validation():
    with pytest.raises(ValueError):
        cluster_obstacles(cloud([[0, 0, 0]]), eps=0.0)
    assert cluster_obstacles(cloud([])) == []


# --- box fitting ---

def test_fit_axis_aligned_rectangle():
    b = fit_box(cloud([[0, 0, 0], [2, 0, 0], [2, 1, 0], [0, 1, 0]]))
    assert (b.length, b.width) == pytest.approx((2.0, 1.0))
    assert b.yaw == pytest.approx(0.0, abs=1e-12)
    assert b.center == pytest.approx((1.0, 0.5))


def test_fit_rotated_rectangle():
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    pts = np.array([[0, 0], [2, 0], [2, 1], [0, 1]]) @ np.array([[c, s], [-s, c]])
    b = fit_box(cloud(np.column_stack([pts, np.zeros(4)])))
    assert (b.length, b.width) == pytest.approx((2.0, 1.0))
    assert b.yaw == pytest.approx(math.pi / 4)


def test_fit_degenerate_clusters():
    b = fit_box(cloud([[1.0, 2.0, 0.5]]))
    assert b.center == (1.0, 2.0) and b.length == b.width == 0.1
    b = fit_box(cloud([[0, 0, 0], [1, 1, 0], [2, 2, 0]]))
    assert b.length == pytest.approx(2 * math.sqrt(2)) and b.width == 0.1
    with pytest.raises(ValueError):
        fit_box(cloud([]))


def _sweep(xy):
    best = math.inf
    for a in np.radians(np.arange(0, 90, 0.1)):
        r = xy @ np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        best = min(best, np.ptp(r[:, 0]) * np.ptp(r[:, 1]))
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_min_area_matches_sweep_and_beats_aabb(seed):
    xy = np.random.default_rng(seed).normal(size=(30, 2)) * [3, 1]
    _, _, a, b = min_area_rectangle(xy)
    oracle = _sweep(xy)
    assert abs(a * b - oracle) <= 0.005 * oracle
    assert a * b <= np.ptp(xy[:, 0]) * np.ptp(xy[:, 1]) + 1e-9


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-4, 4), st.floats(0.1, 5), st.floats(0.1, 5))
def test_box_corners_encloses_and_normalizes(cx, cy, yaw, ln, wd):
    box = ObstacleBox((cx, cy), yaw, ln, wd)
    assert box.length >= box.width
    assert -math.pi / 2 < box.yaw <= math.pi / 2
    corners = box.corners()
    _, _, a, b = min_area_rectangle(corners)
    assert a * b == pytest.approx(ln * wd, rel=1e-9)
    np.testing.assert_allclose(corners.mean(axis=0), [cx, cy], atol=1e-9)


# --- depth images ---

def _ground_image(rows=60, cols=40, hfov=math.radians(60), vfov=math.radians(60), h=1.8):
    blank = DepthImage(np.zeros((rows, cols)), hfov, vfov, height=h)
    rz = blank.pixel_rays()[..., 2]
    d = np.where(rz < 0, h / np.where(rz < 0, -rz, 1.0), 0.0)
    return DepthImage(d, hfov, vfov, height=h)


def test_centre_pixel_on_optical_axis():
    d = np.zeros((3, 3))
    d[1, 1] = 7.5
    pts = depth_to_cloud(DepthImage(d, 1.0, 1.0, height=1.8))
    np.testing.assert_allclose(pts.xyz, [[7.5, 0.0, 1.8]], atol=1e-12)
    assert len(depth_to_cloud(DepthImage(np.zeros((4, 4)), 1.0, 1.0))) == 0


def test_ground_reconstructs_to_z_zero():
    pts, valid = reconstruct(_ground_image())
    assert np.abs(pts[valid][:, 2]).max() < 1e-9


def test_inclined_face_back_projects_onto_plane():
    # plane n . p = d in the camera frame, rendered analytically
    n = np.array([0.9, 0.3, 0.1])
    n /= np.linalg.norm(n)
    dist = 8.0
    blank = DepthImage(np.zeros((50, 70)), math.radians(50), math.radians(40), height=1.8)
    rays = blank.pixel_rays()
    depth = dist / (rays @ n)
    pts, _ = reconstruct(DepthImage(depth, blank.horizontal_fov, blank.vertical_fov, height=1.8))
    cam = pts - [0.0, 0.0, 1.8]
    assert np.abs(cam @ n - dist).max() < 0.01


def test_filter_rejects_perturbed_ground_pixel():
    img = _ground_image()
    d = img.depth.copy()
    col = 5
    r = int(np.nonzero(d[:, col])[0][5])
    d[r, col] *= 1.003
    out = virtual_scan_filter(DepthImage(d, img.horizontal_fov, img.vertical_fov, height=img.height))
    assert out.depth[r, col] == 0.0


def test_filter_keeps_only_valid_subset_and_never_drops_failing_triples():
    rng = np.random.default_rng(9)
    img = _ground_image()
    d = img.depth * (1 + rng.normal(0, 0.05, img.depth.shape))
    d[rng.random(d.shape) < 0.2] = 0.0
    img = DepthImage(np.maximum(d, 0), img.horizontal_fov, img.vertical_fov, height=img.height)
    out = virtual_scan_filter(img, 0.985)
    assert np.all((out.depth == img.depth) | (out.depth == 0))
    pts, valid = reconstruct(img)
    for c in range(img.cols):
        chain = [r for r in range(img.rows - 1, -1, -1) if valid[r, c]]
        for k in range(1, len(chain) - 1):
            a, b, e = pts[chain[k - 1], c], pts[chain[k], c], pts[chain[k + 1], c]
            u, v = (b - a) / np.linalg.norm(b - a), (e - b) / np.linalg.norm(e - b)
            drop = abs(u @ v) > 0.985 and min(abs(u[2]), abs(v[2])) < math.sqrt(0.5)
            assert (out.depth[chain[k], c] == 0) == drop


def test_filter_validates_threshold():
    with pytest.raises(ValueError):
        virtual_scan_filter(_ground_image(), 1.0)


# --- full pipeline on ray-cast returns ---

def _lidar_world(actors):
    cfg = scenario_from_dict({"name": "d", "route": {"waypoints": [[0, 0], [50, 0]]},
                              "sensors": {"lidar_points_per_second": 300000}, "actors": actors})
    w = SimWorld(cfg)
    return w, sense_lidar(w, cfg.sensors, np.random.default_rng(0))


def _car(i, x, y, yaw=0.0):
    return {"id": f"c{i}", "type": "vehicle", "length": 4.6, "width": 1.9, "height": 1.5,
            "motion": {"kind": "static", "pose": [x, y, yaw]}}


def test_empty_cloud_gives_no_boxes():
    assert detect_obstacles(cloud([])) == []


def test_car_ahead_box_matches_visible_returns():
    w, pts = _lidar_world([_car(0, 10.0, 0.0)])
    boxes = detect_obstacles(pts)
    assert len(boxes) == 1
    b = boxes[0]
    above = pts.xyz[pts.xyz[:, 2] > 0.05]
    # occlusion: only the rear face is visible, so compare with the visible returns
    assert math.dist(b.center, above[:, :2].mean(axis=0)) < 0.3
    truth = w.actors[0].box()
    lo = np.array(truth.center) - [truth.length / 2 + 0.1, truth.width / 2 + 0.1]
    hi = np.array(truth.center) + [truth.length / 2 + 0.1, truth.width / 2 + 0.1]
    assert np.all((b.corners() >= lo - 1e-9) & (b.corners() <= hi + 1e-9))
    assert b.height == pytest.approx(1.5, abs=0.1)


def test_two_cars_five_metres_apart():
    _, pts = _lidar_world([_car(0, 12.0, 0.0), _car(1, 12.0, 6.9)])
    assert len(detect_obstacles(pts, eps=1.0)) == 2


@settings(max_examples=8, deadline=None)
@given(st.lists(st.tuples(st.floats(-1.2, 1.2), st.floats(-0.5, 0.5)), min_size=1, max_size=3))
def test_k_disjoint_boxes_give_k_detections(jitter):
    # cars on a fan of bearings, well separated and unoccluded
    actors = []
    for k, (dy, yaw) in enumerate(jitter):
        bearing = (k - 1) * math.radians(45)
        actors.append(_car(k, 12 * math.cos(bearing), 12 * math.sin(bearing) + dy, yaw))
    _, pts = _lidar_world(actors)
    assert len(detect_obstacles(pts)) == len(actors)
