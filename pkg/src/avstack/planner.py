"""Sparse route to dense, arc-length parameterized reference path."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

from .common import normalize_angle, normalize_angles


class Command(str, Enum):
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STRAIGHT = "straight"
    CHANGE_LANE_LEFT = "change_lane_left"
    CHANGE_LANE_RIGHT = "change_lane_right"


@dataclass(frozen=True)
class Route:
    waypoints: tuple
    commands: tuple = ()

    def __post_init__(self):
        wps = tuple((float(x), float(y)) for x, y in self.waypoints)
        if len(wps) < 2:
            raise ValueError("a route needs at least two waypoints")
        for a, b in zip(wps, wps[1:]):
            if math.hypot(b[0] - a[0], b[1] - a[1]) < 1e-9:
                raise ValueError(f"duplicate consecutive waypoint {a}")
        object.__setattr__(self, "waypoints", wps)
        cmds = tuple(Command(c) if c is not None else None for c in self.commands)
        if cmds and len(cmds) != len(wps):
            raise ValueError("commands must be empty or one per waypoint")
        object.__setattr__(self, "commands", cmds)


@dataclass(frozen=True)
class PathSample:
    s: float
    x: float
    y: float
    theta_ref: float
    kappa_ref: float


@dataclass(eq=False)
class DensePath:
    """Samples stored column-wise; ``spline`` keeps the continuous curve."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray
    spline: tuple | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.s)

    def __getitem__(self, i) -> PathSample:
        return PathSample(float(self.s[i]), float(self.x[i]), float(self.y[i]),
                          float(self.theta[i]), float(self.kappa[i]))

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def interpolate(self, s_query):
        """(x, y, theta, kappa) at arc lengths, clamped to the path ends."""
        sq = np.clip(np.asarray(s_query, dtype=float), 0.0, self.length)
        x = np.interp(sq, self.s, self.x)
        y = np.interp(sq, self.s, self.y)
        th = self.theta[0] + np.interp(sq, self.s, np.unwrap(self.theta) - self.theta[0])
        k = np.interp(sq, self.s, self.kappa)
        return x, y, normalize_angles(th), k

    def project(self, p) -> tuple[float, float]:
        return project_to_path(p, self)


def _arc_length_table(cx, cy, t_knots, per_interval=64):
    # composite Gauss-Legendre quadrature, cumulative at a fine parameter grid
    gx, gw = np.polynomial.legendre.leggauss(5)
    t_fine = np.concatenate([
        np.linspace(a, b, per_interval, endpoint=False) for a, b in zip(t_knots[:-1], t_knots[1:])
    ] + [t_knots[-1:]])
    a, b = t_fine[:-1], t_fine[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    tq = mid[:, None] + half[:, None] * gx[None, :]
    speed = np.hypot(cx(tq, 1), cy(tq, 1))
    seg = (speed * gw[None, :]).sum(axis=1) * half
    return t_fine, np.concatenate([[0.0], np.cumsum(seg)])


def densify_route(r: Route, spacing: float = 0.5) -> DensePath:
    """Natural cubic spline through the waypoints, resampled every <= ``spacing`` meters."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = np.asarray(r.waypoints, dtype=float)
    chord = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    t_knots = np.concatenate([[0.0], np.cumsum(chord)])
    cx = CubicSpline(t_knots, pts[:, 0], bc_type="natural")
    cy = CubicSpline(t_knots, pts[:, 1], bc_type="natural")

    t_fine, s_fine = _arc_length_table(cx, cy, t_knots)
    total = s_fine[-1]
    n = max(1, int(math.ceil(total / spacing - 1e-9)))
    s_samples = np.linspace(0.0, total, n + 1)
    t = np.interp(s_samples, s_fine, t_fine)
    # Newton on s(t) = s_target, with s(t) integrated exactly from the nearest table node
    gx, gw = np.polynomial.legendre.leggauss(5)
    for _ in range(2):
        k = np.clip(np.searchsorted(t_fine, t, side="right") - 1, 0, len(t_fine) - 2)
        mid, half = 0.5 * (t_fine[k] + t), 0.5 * (t - t_fine[k])
        tq = mid[:, None] + half[:, None] * gx[None, :]
        s_t = s_fine[k] + (np.hypot(cx(tq, 1), cy(tq, 1)) * gw[None, :]).sum(axis=1) * half
        speed = np.hypot(cx(t, 1), cy(t, 1))
        t = np.clip(t + (s_samples - s_t) / speed, 0.0, t_knots[-1])
    t[0], t[-1] = 0.0, t_knots[-1]

    dx, dy = cx(t, 1), cy(t, 1)
    ddx, ddy = cx(t, 2), cy(t, 2)
    kappa = (dx * ddy - dy * ddx) / np.power(dx * dx + dy * dy, 1.5)
    return DensePath(
        s=s_samples, x=cx(t), y=cy(t), theta=normalize_angles(np.arctan2(dy, dx)), kappa=kappa,
        spline=(cx, cy, t_knots, t),
    )


def project_to_path(p, path: DensePath) -> tuple[float, float]:
    """Arc length and signed lateral offset (left positive) of a point."""
    px, py = float(p[0]), float(p[1])
    d2 = (path.x - px) ** 2 + (path.y - py) ** 2
    i = int(np.argmin(d2))
    n = len(path)
    if n == 1:
        return float(path.s[0]), 0.0
    best = None
    for j in (i - 1, i):
        if j < 0 or j >= n - 1:
            continue
        ax, ay = path.x[j], path.y[j]
        ex, ey = path.x[j + 1] - ax, path.y[j + 1] - ay
        seg2 = ex * ex + ey * ey
        t = ((px - ax) * ex + (py - ay) * ey) / seg2
        # the end segments extend past the path ends
        lo = -math.inf if j == 0 else 0.0
        hi = math.inf if j == n - 2 else 1.0
        tc = min(max(t, lo), hi)
        qx, qy = ax + tc * ex, ay + tc * ey
        dist2 = (px - qx) ** 2 + (py - qy) ** 2
        if best is None or dist2 < best[0]:
            s = path.s[j] + tc * math.sqrt(seg2)
            cross = ex * (py - ay) - ey * (px - ax)
            best = (dist2, s, math.copysign(math.sqrt(dist2), cross))
    _, s, lateral = best
    return float(min(max(s, 0.0), path.length)), float(lateral)


def heading_at(path: DensePath, s: float) -> float:
    return normalize_angle(float(path.interpolate(s)[2]))
