"""Sensor synthesis: GPS pair, LiDAR, depth camera, CAN and ground-truth objects."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..common import GeoPoint, PointCloud, Pose2D, geo_to_utm, utm_to_geo
from ..decision import Phi
from ..perception import DepthImage, ObstacleBox
from .scenario import SensorSpec
from .world import SimWorld


@dataclass(frozen=True)
class GpsFrame:
    t: float
    back: GeoPoint
    front: GeoPoint


@dataclass(frozen=True)
class CanFrame:
    t: float
    v: float
    steer: float


@dataclass(frozen=True)
class ObjectInfo:
    id: str
    type: str
    box: ObstacleBox


@dataclass(frozen=True)
class LightInfo:
    id: str
    state: Phi
    stop_line: tuple
    kind: str = "light"  # or "stop_sign"


@dataclass(frozen=True)
class GroundTruthObjects:
    objects: tuple = ()
    lights: tuple = ()


def period_steps(rate: float, dt: float) -> int:
    if rate <= 0:
        raise ValueError("sensor rate must be positive")
    return max(1, int(round(1.0 / (rate * dt))))


class GeoFrame:
    """World frame anchored at a geodetic origin; world (x, y) = UTM offsets from it."""

    def __init__(self, origin: GeoPoint):
        e, n, zone, south = geo_to_utm(origin)
        self.easting, self.northing, self.zone, self.south = e, n, zone, south

    def to_geo(self, x: float, y: float) -> GeoPoint:
        return utm_to_geo(self.easting + x, self.northing + y, self.zone, self.south)

    def to_local(self, p: GeoPoint) -> tuple[float, float]:
        e, n, _, _ = geo_to_utm(p, zone=self.zone)
        return e - self.easting, n - self.northing


def sense_gps(w: SimWorld, frame: GeoFrame, rng: np.random.Generator, sigma: float,
              front_offset: float = 2.85) -> GpsFrame:
    """Back receiver at the rear axle, front one ``front_offset`` ahead; noise added in metres."""
    s = sigma * w.cfg.noise_scale
    out = []
    for fwd in (0.0, front_offset):
        x, y = w.ego_point(fwd)
        nx, ny = rng.normal(0.0, s, 2) if s > 0 else (0.0, 0.0)
        out.append(frame.to_geo(x + nx, y + ny))
    return GpsFrame(w.time, out[0], out[1])


def sense_can(w: SimWorld) -> CanFrame:
    return CanFrame(w.time, w.ego.v, w.ego.steer)


def _box_rows(w: SimWorld) -> np.ndarray:
    rows = [(a.pose.x, a.pose.y, a.pose.theta, a.spec.length / 2, a.spec.width / 2, 0.0, a.spec.height)
            for a in w.present_actors()]
    return np.array(rows, dtype=float).reshape(-1, 7)


def lidar_directions(spec: SensorSpec) -> np.ndarray:
    """Unit directions in the sensor frame, channel-major then azimuth."""
    per_frame = max(spec.lidar_channels, int(spec.lidar_points_per_second / spec.lidar_rate))
    n_az = max(1, per_frame // spec.lidar_channels)
    el = np.radians(np.linspace(spec.lidar_lower_deg, spec.lidar_upper_deg, spec.lidar_channels))
    az = np.arange(n_az) * (2 * math.pi / n_az)
    E, A = np.meshgrid(el, az, indexing="ij")
    return np.column_stack([(np.cos(E) * np.cos(A)).ravel(), (np.cos(E) * np.sin(A)).ravel(),
                            np.sin(E).ravel()])


def sense_lidar(w: SimWorld, spec: SensorSpec, rng: np.random.Generator,
                dirs: np.ndarray | None = None) -> PointCloud:
    """Ray-cast returns in the ego frame (origin at rear-axle ground level)."""
    dirs = lidar_directions(spec) if dirs is None else dirs
    p = w.ego.pose
    c, s = math.cos(p.theta), math.sin(p.theta)
    world_dirs = np.column_stack([c * dirs[:, 0] - s * dirs[:, 1], s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]])
    origin = (p.x, p.y, spec.lidar_height)
    rng_m = kernels.raycast(origin, world_dirs, _box_rows(w), True, spec.lidar_range)
    hit = np.isfinite(rng_m)
    r = rng_m[hit]
    sigma = spec.lidar_noise * w.cfg.noise_scale
    if sigma > 0:
        r = r + rng.normal(0.0, sigma, len(r))
    pts = dirs[hit] * r[:, None]
    pts[:, 2] += spec.lidar_height
    return PointCloud(pts)


def camera_image_shape(spec: SensorSpec) -> tuple[float, float]:
    hfov = math.radians(spec.camera_hfov_deg)
    vfov = 2.0 * math.atan(math.tan(hfov / 2.0) * spec.camera_rows / spec.camera_cols)
    return hfov, vfov


def sense_depth(w: SimWorld, spec: SensorSpec, rng: np.random.Generator) -> DepthImage:
    """Ideal z-depth per pixel from a forward camera, with optional multiplicative noise."""
    hfov, vfov = camera_image_shape(spec)
    blank = DepthImage(np.zeros((spec.camera_rows, spec.camera_cols)), hfov, vfov,
                       Pose2D(spec.camera_x, 0.0, 0.0), spec.camera_height)
    rays = blank.pixel_rays().reshape(-1, 3)
    norms = np.linalg.norm(rays, axis=1)
    unit = rays / norms[:, None]
    p = w.ego.pose
    c, s = math.cos(p.theta), math.sin(p.theta)
    world_dirs = np.column_stack([c * unit[:, 0] - s * unit[:, 1], s * unit[:, 0] + c * unit[:, 1], unit[:, 2]])
    ox, oy = w.ego_point(spec.camera_x)
    t = kernels.raycast((ox, oy, spec.camera_height), world_dirs, _box_rows(w), True, spec.camera_range)
    depth = np.where(np.isfinite(t), t / norms, 0.0)
    sigma = spec.depth_noise * w.cfg.noise_scale
    if sigma > 0:
        depth = depth * (1.0 + rng.normal(0.0, sigma, depth.shape))
        depth = np.maximum(depth, 0.0)
    return DepthImage(depth.reshape(spec.camera_rows, spec.camera_cols), hfov, vfov,
                      Pose2D(spec.camera_x, 0.0, 0.0), spec.camera_height)


def _visible(w: SimWorld, xy, max_range: float, fov: float) -> bool:
    lx, ly = w.ego.pose.to_local(*xy)
    return math.hypot(lx, ly) <= max_range and abs(math.atan2(ly, lx)) <= fov / 2.0


def sense_objects(w: SimWorld, max_range: float = math.inf, fov: float = 2 * math.pi,
                  include_actors: bool = True) -> GroundTruthObjects:
    """Exact object and light states; range/fov gate emulates a detector in tracks 1-3."""
    full = math.isinf(max_range) and fov >= 2 * math.pi
    objs = []
    if include_actors:
        for a in w.present_actors():
            if full or _visible(w, (a.pose.x, a.pose.y), max_range, fov):
                objs.append(ObjectInfo(a.id, a.spec.type, a.box()))
    states = w.light_states()
    lights = []
    for lt in w.cfg.lights:
        if full or _visible(w, lt.position, max_range, fov):
            lights.append(LightInfo(lt.id, states[lt.id], lt.stop_line))
    for sign in w.cfg.map.stop_signs:
        mid = tuple(np.mean(np.asarray(sign.stop_line), axis=0))
        if full or _visible(w, mid, max_range, fov):
            lights.append(LightInfo(sign.id, Phi.RED, sign.stop_line, kind="stop_sign"))
    return GroundTruthObjects(tuple(objs), tuple(lights))


TRACK_SENSORS = {
    "track1": ("gps", "can", "lidar", "camera", "detector"),
    "track2": ("gps", "can", "camera", "detector"),
    "track3": ("gps", "can", "lidar", "camera", "detector", "map"),
    "track4": ("gps", "can", "objects"),
}


@dataclass
class SensorSnapshot:
    t: float
    dt: float
    can: CanFrame
    gps: GpsFrame | None = None
    lidar: PointCloud | None = None
    depth: DepthImage | None = None
    objects: GroundTruthObjects | None = None


class SensorRig:
    """Emits the frames a track mode allows on each sensor's own schedule."""

    def __init__(self, w: SimWorld, frame: GeoFrame | None = None):
        cfg = w.cfg
        self.spec = cfg.sensors
        self.track = cfg.track_mode
        self.available = TRACK_SENSORS[self.track]
        if "lidar" in self.available and not self.spec.lidar:
            self.available = tuple(s for s in self.available if s != "lidar")
        if "camera" in self.available and not self.spec.camera:
            self.available = tuple(s for s in self.available if s != "camera")
        self.frame = frame or GeoFrame(cfg.geo_origin)
        seed = w.seed
        self._rng = {name: np.random.default_rng([seed, k]) for k, name in enumerate(("gps", "lidar", "depth"))}
        self._period = {
            "gps": period_steps(self.spec.gps_rate, cfg.dt),
            "lidar": period_steps(self.spec.lidar_rate, cfg.dt),
            "camera": period_steps(self.spec.camera_rate, cfg.dt),
        }
        self._lidar_dirs = lidar_directions(self.spec) if "lidar" in self.available else None
        self.frames = {"gps": 0, "lidar": 0, "camera": 0, "objects": 0}

    def due(self, sensor: str, step: int) -> bool:
        return step % self._period[sensor] == 0

    def snapshot(self, w: SimWorld) -> SensorSnapshot:
        k = w.step_index
        snap = SensorSnapshot(w.time, w.cfg.dt, sense_can(w))
        if self.due("gps", k):
            snap.gps = sense_gps(w, self.frame, self._rng["gps"], self.spec.gps_sigma, self.spec.gps_front_offset)
            self.frames["gps"] += 1
        if "lidar" in self.available and self.due("lidar", k):
            snap.lidar = sense_lidar(w, self.spec, self._rng["lidar"], self._lidar_dirs)
            self.frames["lidar"] += 1
        if "camera" in self.available and self.due("camera", k):
            snap.depth = sense_depth(w, self.spec, self._rng["depth"])
            self.frames["camera"] += 1
        if "objects" in self.available:
            snap.objects = sense_objects(w)
            self.frames["objects"] += 1
        elif "detector" in self.available:
            snap.objects = sense_objects(w, self.spec.detector_range, math.radians(self.spec.detector_fov_deg),
                                         include_actors=False)
            self.frames["objects"] += 1
        return snap
