"""Hazardous obstacle monitor: attention zones along the path and distance to collision."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .common import VehicleState
from .perception import ObstacleBox
from .planner import DensePath, project_to_path


class Zone(str, Enum):
    DANGER = "danger"
    WARNING = "warning"
    SAFE = "safe"


@dataclass(frozen=True)
class ZoneConfig:
    danger_end: float = 5.0
    warning_end: float = 15.0
    corridor_halfwidth: float = 1.0
    proximity_threshold: float = 1.0
    horizon: float = 4.0
    dt: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.danger_end < self.warning_end:
            raise ValueError("need 0 < danger_end < warning_end")
        if self.proximity_threshold <= 0:
            raise ValueError("proximity_threshold must be positive")

    @classmethod
    def for_speed(cls, v: float, **kw) -> "ZoneConfig":
        """Zones stretched by speed: 1.5 s and 4 s of travel, with 5 m and 15 m floors."""
        return cls(danger_end=max(5.0, 1.5 * v), warning_end=max(15.0, 4.0 * v), **kw)


@dataclass(frozen=True)
class Conflict:
    obstacle_id: int
    zone: Zone
    dtc: float
    time_of_conflict: float | None = None

    def __post_init__(self):
        if self.dtc < 0:
            raise ValueError("dtc must be non-negative")


def predict_positions(box: ObstacleBox, horizon: float, dt: float) -> list[ObstacleBox]:
    """Future boxes at t = dt, 2 dt, ... up to ``horizon``; one copy when velocity is unknown."""
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    if box.velocity is None:
        return [box]
    vx, vy = box.velocity
    n = int(math.ceil(horizon / dt - 1e-9))
    cx, cy = box.center
    return [replace(box, center=(cx + vx * k * dt, cy + vy * k * dt)) for k in range(1, n + 1)]


def classify_zone(dtc: float, cfg: ZoneConfig) -> Zone:
    if dtc < 0:
        raise ValueError("dtc must be non-negative")
    if dtc <= cfg.danger_end:
        return Zone.DANGER
    if dtc <= cfg.warning_end:
        return Zone.WARNING
    return Zone.SAFE


def _segment_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every point to every segment (a_k, b_k): shape (len(pts), len(a))."""
    e = b - a
    e2 = np.maximum((e * e).sum(axis=1), 1e-18)
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip((rel * e[None]).sum(axis=2) / e2[None], 0.0, 1.0)
    q = a[None] + t[..., None] * e[None]
    return np.hypot(pts[:, None, 0] - q[..., 0], pts[:, None, 1] - q[..., 1])


def footprint_distance(box: ObstacleBox, xy: np.ndarray) -> np.ndarray:
    """Distance from each 2-D point to the filled rectangle (0 inside)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = xy - np.asarray(box.center)
    u = rel[:, 0] * c + rel[:, 1] * s
    w = -rel[:, 0] * s + rel[:, 1] * c
    du = np.maximum(np.abs(u) - box.length / 2.0, 0.0)
    dw = np.maximum(np.abs(w) - box.width / 2.0, 0.0)
    return np.hypot(du, dw)


def _polyline_hits(box: ObstacleBox, xy: np.ndarray, thr: float) -> np.ndarray:
    """Indices of path samples whose adjacent segment comes within ``thr`` of the box."""
    near = footprint_distance(box, xy) <= thr
    # segments can pass close to a box corner between samples
    corners = box.corners()
    seg = _segment_distances(corners, xy[:-1], xy[1:]).min(axis=0) <= thr
    # segment k conflicts at its start sample
    hits = near.copy()
    hits[:-1] |= seg
    return np.nonzero(hits)[0]


def detect_conflicts(path: DensePath, ego: VehicleState, obstacles, cfg: ZoneConfig = ZoneConfig(),
                     horizon: float | None = None, dt: float | None = None) -> list[Conflict]:
    """Conflicts between obstacles (world frame) and the path ahead of the ego, sorted by dtc."""
    horizon = cfg.horizon if horizon is None else horizon
    dt = cfg.dt if dt is None else dt
    s_ego, _ = project_to_path((ego.pose.x, ego.pose.y), path)
    ahead = path.s >= s_ego
    if ahead.sum() < 1:
        return []
    first = int(np.argmax(ahead))
    # include the segment the ego sits on
    start = max(first - 1, 0)
    xy = path.xy[start:]
    s = path.s[start:]
    out = []
    for oid, box in enumerate(obstacles):
        s_box, _ = project_to_path(box.center, path)
        if s_box < s_ego:
            continue
        if box.velocity is None or (box.velocity[0] == 0.0 and box.velocity[1] == 0.0):
            candidates = [(None, replace(box, velocity=None))]
        else:
            candidates = [(None, box)] + [
                ((k + 1) * dt, b) for k, b in enumerate(predict_positions(box, horizon, dt))]
        best = None
        for t, b in candidates:
            idx = _polyline_hits(b, xy, cfg.proximity_threshold)
            if len(idx):
                # the earliest conflicting time wins
                best = (max(0.0, float(s[idx[0]]) - s_ego), t)
                break
        if best is None:
            continue
        dtc, t = best
        out.append(Conflict(oid, classify_zone(dtc, cfg), dtc, t))
    out.sort(key=lambda c: (c.dtc, c.obstacle_id))
    return out
