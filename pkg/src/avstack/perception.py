"""Obstacle detection from point clouds and depth images.

Pipeline: height map over the ground plane -> occupied cells as points ->
density clustering in (x, y) -> minimum-area oriented rectangle per cluster.
Depth images get a column-wise collinearity filter first (ground and spray
noise removal), are back-projected, and then go through the same pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import kernels
from .common import PointCloud, Pose2D, normalize_angle

MIN_BOX_EXTENT = 0.1


@dataclass(frozen=True)
class GridSpec:
    cells_x: int = 500
    cells_y: int = 500
    resolution: float = 0.10
    origin: tuple = (0.0, -25.0)
    height_threshold: float = 0.15

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.cells_x <= 0 or self.cells_y <= 0:
            raise ValueError("grid must have cells")


@dataclass
class HeightGrid:
    spec: GridSpec
    min_z: np.ndarray
    max_z: np.ndarray
    count: np.ndarray
    dropped: int = 0

    @property
    def occupied(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            spread = self.max_z - self.min_z
        return (self.count >= 2) & (spread > self.spec.height_threshold)

    def cell_center(self, i, j):
        s = self.spec
        return (s.origin[0] + (np.asarray(i) + 0.5) * s.resolution,
                s.origin[1] + (np.asarray(j) + 0.5) * s.resolution)


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray  # (rows, cols), metres along the optical axis, 0 = invalid
    horizontal_fov: float
    vertical_fov: float
    pose: Pose2D = field(default_factory=Pose2D)  # camera position/yaw in the vehicle frame
    height: float = 1.8

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("depth must be finite and non-negative")
        for fov in (self.horizontal_fov, self.vertical_fov):
            if not 0.0 < fov < math.pi:
                raise ValueError("field of view must lie in (0, pi)")
        object.__setattr__(self, "depth", d)

    @property
    def rows(self) -> int:
        return self.depth.shape[0]

    @property
    def cols(self) -> int:
        return self.depth.shape[1]

    @property
    def intrinsics(self) -> tuple[float, float, float, float]:
        """(fx, fy, cx, cy) in pixels; pixel centres sit at integer + 0.5."""
        fx = (self.cols / 2.0) / math.tan(self.horizontal_fov / 2.0)
        fy = (self.rows / 2.0) / math.tan(self.vertical_fov / 2.0)
        return fx, fy, self.cols / 2.0, self.rows / 2.0

    def pixel_rays(self) -> np.ndarray:
        """Unnormalized camera-frame ray per pixel with unit forward component.

        Camera frame: x forward (optical axis), y left, z up.
        """
        fx, fy, cx, cy = self.intrinsics
        u = np.arange(self.cols) + 0.5
        v = np.arange(self.rows) + 0.5
        ry = -(u - cx) / fx
        rz = -(v - cy) / fy
        rays = np.empty((self.rows, self.cols, 3))
        rays[..., 0] = 1.0
        rays[..., 1] = ry[None, :]
        rays[..., 2] = rz[:, None]
        return rays


@dataclass(frozen=True)
class ObstacleBox:
    center: tuple
    yaw: float
    length: float
    width: float
    height: float = 0.0
    velocity: tuple | None = None

    def __post_init__(self):
        length, width, yaw = float(self.length), float(self.width), float(self.yaw)
        if width > length:
            length, width = width, length
            yaw += math.pi / 2.0
        if width <= 0:
            raise ValueError("box extents must be positive")
        yaw = normalize_angle(yaw)
        # rectangle symmetry: fold into (-pi/2, pi/2]
        if yaw <= -math.pi / 2.0:
            yaw += math.pi
        elif yaw > math.pi / 2.0:
            yaw -= math.pi
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    def transformed(self, pose: Pose2D) -> "ObstacleBox":
        """Express a vehicle-frame box in the frame where ``pose`` lives."""
        cx, cy = pose.to_world(*self.center)
        vel = None
        if self.velocity is not None:
            c, s = math.cos(pose.theta), math.sin(pose.theta)
            vx, vy = self.velocity
            vel = (c * vx - s * vy, s * vx + c * vy)
        return replace(self, center=(cx, cy), yaw=self.yaw + pose.theta, velocity=vel)


def build_height_grid(cloud: PointCloud, spec: GridSpec = GridSpec()) -> HeightGrid:
    min_z, max_z, count, dropped = kernels.bin_height_grid(
        cloud.xyz, spec.origin[0], spec.origin[1], spec.resolution, spec.cells_x, spec.cells_y)
    return HeightGrid(spec, min_z, max_z, count, dropped)


def occupied_points(grid: HeightGrid) -> PointCloud:
    i, j = np.nonzero(grid.occupied)
    x, y = grid.cell_center(i, j)
    return PointCloud(np.column_stack([x, y, grid.max_z[i, j]]))


def cluster_obstacles(cloud: PointCloud, eps: float = 0.5, min_pts: int = 4) -> list[np.ndarray]:
    """Density-based clustering on (x, y).

    Core points have at least ``min_pts`` neighbours within ``eps`` (counting
    themselves). Clusters are connected components of core points; a border
    point joins the cluster of its nearest core point, ties going to the core
    point with the smallest (x, y), so labels do not depend on input order.
    Noise is dropped. Clusters come back sorted by their lowest member index.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    xy = cloud.xyz[:, :2]
    n = len(xy)
    if n == 0:
        return []
    tree = cKDTree(xy)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    degree = np.ones(n, dtype=int) + np.bincount(pairs.ravel(), minlength=n)
    core = degree >= min_pts

    parent = np.arange(n)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    for a, b in cc:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    label = np.full(n, -1)
    for k in np.nonzero(core)[0]:
        label[k] = find(k)

    border = pairs[core[pairs[:, 0]] ^ core[pairs[:, 1]]]
    if len(border):
        c_idx = np.where(core[border[:, 0]], border[:, 0], border[:, 1])
        b_idx = np.where(core[border[:, 0]], border[:, 1], border[:, 0])
        d2 = ((xy[c_idx] - xy[b_idx]) ** 2).sum(axis=1)
        order = np.lexsort((xy[c_idx, 1], xy[c_idx, 0], d2, b_idx))
        seen = set()
        for k in order:
            b = b_idx[k]
            if b not in seen:
                seen.add(b)
                label[b] = label[c_idx[k]]

    groups: dict[int, list[int]] = {}
    for k in range(n):
        if label[k] >= 0:
            groups.setdefault(int(label[k]), []).append(k)
    return sorted((np.array(g) for g in groups.values()), key=lambda g: g[0])


def _hull(xy: np.ndarray) -> np.ndarray:
    try:
        h = ConvexHull(xy)
        return xy[h.vertices]
    except (QhullError, ValueError):
        # collinear or too few points: the extreme points along the main axis
        c = xy.mean(axis=0)
        d = xy - c
        _, _, vt = np.linalg.svd(d, full_matrices=False)
        t = d @ vt[0]
        return xy[[int(np.argmin(t)), int(np.argmax(t))]]


def min_area_rectangle(xy: np.ndarray) -> tuple[tuple[float, float], float, float, float]:
    """Rotating calipers over hull edges: (center, yaw, extent_along, extent_across)."""
    hull = _hull(np.asarray(xy, dtype=float))
    if np.ptp(hull, axis=0).max() < 1e-12:
        return (float(hull[0, 0]), float(hull[0, 1])), 0.0, 0.0, 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    keep = lengths > 1e-12
    angles = np.arctan2(edges[keep, 1], edges[keep, 0])
    best = None
    for ang in angles:
        c, s = math.cos(ang), math.sin(ang)
        u = hull[:, 0] * c + hull[:, 1] * s
        w = -hull[:, 0] * s + hull[:, 1] * c
        area = (u.max() - u.min()) * (w.max() - w.min())
        if best is None or area < best[0] - 1e-12:
            best = (area, ang, u.min(), u.max(), w.min(), w.max())
    _, ang, u0, u1, w0, w1 = best
    c, s = math.cos(ang), math.sin(ang)
    um, wm = 0.5 * (u0 + u1), 0.5 * (w0 + w1)
    center = (um * c - wm * s, um * s + wm * c)
    return center, ang, u1 - u0, w1 - w0


def fit_box(cluster: PointCloud, min_extent: float = MIN_BOX_EXTENT) -> ObstacleBox:
    if len(cluster) == 0:
        raise ValueError("cannot fit a box to an empty cluster")
    xyz = cluster.xyz
    center, yaw, a, b = min_area_rectangle(xyz[:, :2])
    height = float(xyz[:, 2].max() - xyz[:, 2].min())
    return ObstacleBox(center, yaw, max(a, min_extent), max(b, min_extent), height)


def reconstruct(img: DepthImage) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols, 3) vehicle-frame points and validity mask."""
    valid = img.depth > 0.0
    cam = img.pixel_rays() * img.depth[..., None]
    c, s = math.cos(img.pose.theta), math.sin(img.pose.theta)
    pts = np.empty_like(cam)
    pts[..., 0] = img.pose.x + c * cam[..., 0] - s * cam[..., 1]
    pts[..., 1] = img.pose.y + s * cam[..., 0] + c * cam[..., 1]
    pts[..., 2] = img.height + cam[..., 2]
    return pts, valid


def virtual_scan_filter(img: DepthImage, dot_threshold: float = 0.985,
                        steep_sin: float = math.sqrt(0.5)) -> DepthImage:
    """Drop ground and spray-noise pixels column by column.

    Each column is a virtual ray walked from the bottom row up. For valid
    consecutive points A, B, C, B is dropped when the unit vectors AB and BC
    are parallel or anti-parallel (``|dot| > dot_threshold``) and one of the
    two runs flatter than ``asin(steep_sin)`` (45 degrees by default). Vertical
    structure therefore survives even though it is collinear too.
    """
    if not 0.0 < dot_threshold < 1.0:
        raise ValueError("dot_threshold must lie in (0, 1)")
    pts, valid = reconstruct(img)
    keep = kernels.virtual_scan_keep(pts, valid.astype(np.uint8), dot_threshold, steep_sin)
    return replace(img, depth=np.where(keep.astype(bool), img.depth, 0.0))


def depth_to_cloud(img: DepthImage) -> PointCloud:
    pts, valid = reconstruct(img)
    return PointCloud(pts[valid])


@dataclass
class DetectionStats:
    calls: int = 0
    dropped_points: int = 0


def detect_obstacles(cloud: PointCloud, spec: GridSpec = GridSpec(), eps: float = 0.5,
                     min_pts: int = 4, stats: DetectionStats | None = None) -> list[ObstacleBox]:
    if stats is not None:
        stats.calls += 1
    if len(cloud) == 0:
        return []
    grid = build_height_grid(cloud, spec)
    if stats is not None:
        stats.dropped_points += grid.dropped
    occ = occupied_points(grid)
    boxes = []
    for idx in cluster_obstacles(occ, eps, min_pts):
        members = occ.subset(idx)
        box = fit_box(members)
        # the box height spans from the lowest return under the cluster to its top
        i = np.floor((members.xyz[:, 0] - spec.origin[0]) / spec.resolution).astype(int)
        j = np.floor((members.xyz[:, 1] - spec.origin[1]) / spec.resolution).astype(int)
        height = float(grid.max_z[i, j].max() - grid.min_z[i, j].min())
        boxes.append(replace(box, height=height))
    return boxes
