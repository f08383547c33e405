"""World state, stepping and infraction detection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import LineString, Point, Polygon
from shapely.prepared import prep

from ..common import Pose2D, VehicleState
from ..decision import Phi
from ..perception import ObstacleBox
from .scenario import ActorSpec, ScenarioConfig

INFRACTION_POINTS = {
    "hit_static": 6,
    "hit_vehicle": 6,
    "hit_pedestrian": 9,
    "red_light": 3,
    "opposite_lane": 2,
    "sidewalk": 2,
    "stop_sign": 2,
}
HIT_KIND = {"static": "hit_static", "vehicle": "hit_vehicle", "pedestrian": "hit_pedestrian"}
STOP_SPEED = 0.1
STOP_SIGN_WINDOW = 5.0


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    time: float
    payload: tuple = ()

    def __post_init__(self):
        if self.kind not in INFRACTION_POINTS:
            raise ValueError(f"unknown infraction kind {self.kind!r}")

    @property
    def points(self) -> int:
        return INFRACTION_POINTS[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "time": self.time, "points": self.points, **dict(self.payload)}


class EventLog:
    """Append-only list of (time, kind, payload) records."""

    def __init__(self):
        self.records: list[dict] = []

    def emit(self, t: float, kind: str, **payload) -> None:
        self.records.append({"t": round(t, 6), "kind": kind, **payload})

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)


def rectangle(center, yaw: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=float)


def rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given by corners."""
    for poly in (a, b):
        for k in range(4):
            e = poly[(k + 1) % 4] - poly[k]
            axis = np.array([-e[1], e[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def segments_cross(p0, p1, q0, q1) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q0, q1, p0), orient(q0, q1, p1)
    d3, d4 = orient(p0, p1, q0), orient(p0, p1, q1)
    return (d1 * d2 < 0 or d2 == 0 and d1 != 0) and d3 * d4 <= 0


@dataclass
class Actor:
    spec: ActorSpec
    pose: Pose2D
    v: float = 0.0
    present: bool = True
    started: bool = False
    t_start: float = 0.0
    s: float = 0.0
    _cum: np.ndarray | None = None

    def __post_init__(self):
        if self.spec.motion.kind == "path":
            wps = np.asarray(self.spec.motion.waypoints)
            self._cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(wps, axis=0).T))])

    @property
    def id(self) -> str:
        return self.spec.id

    def speed_at(self, t: float) -> float:
        m = self.spec.motion
        if m.kind == "static" or not self.started:
            return 0.0
        if m.speed_profile:
            ts = [p[0] for p in m.speed_profile]
            vs = [p[1] for p in m.speed_profile]
            return float(np.interp(t - self.t_start, ts, vs))
        return m.speed

    def advance(self, t: float, dt: float) -> None:
        m = self.spec.motion
        if m.kind == "static" or not self.started:
            self.v = 0.0
            return
        self.v = self.speed_at(t + dt)
        if m.kind == "constant_velocity":
            self.pose = Pose2D(self.pose.x + self.v * math.cos(self.pose.theta) * dt,
                               self.pose.y + self.v * math.sin(self.pose.theta) * dt, self.pose.theta)
            return
        wps = np.asarray(m.waypoints)
        self.s = min(self.s + self.v * dt, float(self._cum[-1]))
        if self.s >= self._cum[-1]:
            self.v = 0.0
        k = int(np.clip(np.searchsorted(self._cum, self.s, side="right") - 1, 0, len(wps) - 2))
        seg = wps[k + 1] - wps[k]
        f = (self.s - self._cum[k]) / max(self._cum[k + 1] - self._cum[k], 1e-12)
        p = wps[k] + f * seg
        self.pose = Pose2D(float(p[0]), float(p[1]), math.atan2(seg[1], seg[0]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.v * math.cos(self.pose.theta), self.v * math.sin(self.pose.theta))

    def corners(self) -> np.ndarray:
        return rectangle((self.pose.x, self.pose.y), self.pose.theta, self.spec.length, self.spec.width)

    def box(self) -> ObstacleBox:
        return ObstacleBox((self.pose.x, self.pose.y), self.pose.theta, self.spec.length,
                           self.spec.width, self.spec.height, self.velocity)


class SimWorld:
    """Ego, scripted actors and lights advanced by a fixed step."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.step_index = 0
        veh = cfg.vehicle
        self.ego = VehicleState(cfg.ego_start, cfg.ego_speed, 0.0, veh.wheelbase, veh.max_steer)
        self.actors = [Actor(a, a.start_pose, present=not a.spawn_on_trigger,
                             started=a.trigger_distance is None) for a in cfg.actors]
        self.log = EventLog()
        self.infractions: list[InfractionEvent] = []
        self._active: set = set()
        self._stop_ok: dict[str, bool] = {s.id: False for s in cfg.map.stop_signs}
        self._sidewalks = [prep(Polygon(p)) for p in cfg.map.sidewalks]
        self._opposite = [prep(LineString(ln.centerline).buffer(ln.width / 2.0, cap_style=2))
                          for ln in cfg.map.lanes if ln.opposite]
        for a in self.actors:
            if a.present and a.started:
                a.v = a.speed_at(0.0)
        self._check_triggers()

    @property
    def time(self) -> float:
        return self.step_index * self.cfg.dt

    def light_states(self, t: float | None = None) -> dict[str, Phi]:
        t = self.time if t is None else t
        return {lt.id: lt.schedule.state_at(t) for lt in self.cfg.lights}

    def ego_point(self, forward: float, pose: Pose2D | None = None) -> tuple[float, float]:
        p = self.ego.pose if pose is None else pose
        return (p.x + forward * math.cos(p.theta), p.y + forward * math.sin(p.theta))

    def ego_corners(self, pose: Pose2D | None = None) -> np.ndarray:
        p = self.ego.pose if pose is None else pose
        veh = self.cfg.vehicle
        return rectangle(self.ego_point(veh.center_offset, p), p.theta, veh.length, veh.width)

    def present_actors(self) -> list[Actor]:
        return [a for a in self.actors if a.present]

    def _check_triggers(self) -> None:
        front = self.ego_point(self.cfg.vehicle.front_offset)
        for a in self.actors:
            if a.started:
                continue
            sp = a.spec.start_pose
            if math.hypot(sp.x - front[0], sp.y - front[1]) <= a.spec.trigger_distance:
                a.started = True
                a.t_start = self.time
                a.v = a.speed_at(self.time)
                if not a.present:
                    a.present = True
                    self.log.emit(self.time, "spawn", actor=a.id)
                else:
                    self.log.emit(self.time, "trigger", actor=a.id)

    def step(self, throttle_brake: float, steer: float) -> None:
        """Advance one fixed step under the given ego command."""
        cfg, veh = self.cfg, self.cfg.vehicle
        dt = cfg.dt
        u = min(max(float(throttle_brake), -1.0), 1.0)
        accel = u * (veh.a_throttle if u >= 0 else veh.a_brake)
        v = max(0.0, self.ego.v + accel * dt)
        phi = min(max(float(steer), -veh.max_steer), veh.max_steer)
        p = self.ego.pose
        kappa = math.tan(phi) / veh.wheelbase
        pose = Pose2D(p.x + v * math.cos(p.theta) * dt, p.y + v * math.sin(p.theta) * dt,
                      p.theta + v * kappa * dt)
        before = self.ego
        self.ego = VehicleState(pose, v, phi, veh.wheelbase, veh.max_steer)
        t = self.time
        for a in self.actors:
            if a.present:
                a.advance(t, dt)
        self.step_index += 1
        self._check_triggers()
        for ev in detect_infractions(self, before):
            self.infractions.append(ev)
            self.log.emit(ev.time, ev.kind, points=ev.points, **dict(ev.payload))


def _episode(w: SimWorld, key, active: bool) -> bool:
    """True when ``key`` starts a new violation episode."""
    if not active:
        w._active.discard(key)
        return False
    if key in w._active:
        return False
    w._active.add(key)
    return True


def detect_infractions(w: SimWorld, before: VehicleState) -> list[InfractionEvent]:
    """Infractions caused by the ego moving from ``before`` to ``w.ego``; each episode reported once."""
    t = round(w.time, 6)
    veh = w.cfg.vehicle
    out = []
    ego_rect = w.ego_corners()
    for a in w.actors:
        hit = a.present and rects_overlap(ego_rect, a.corners())
        if _episode(w, ("hit", a.id), hit):
            out.append(InfractionEvent(HIT_KIND[a.spec.type], t, (("actor", a.id),)))

    if w._sidewalks:
        poly = Polygon(ego_rect)
        on_walk = any(s.intersects(poly) and not s.touches(poly) for s in w._sidewalks)
        if _episode(w, "sidewalk", on_walk):
            out.append(InfractionEvent("sidewalk", t))
    if w._opposite:
        c = Point(w.ego_point(veh.center_offset))
        if _episode(w, "opposite_lane", any(lane.contains(c) for lane in w._opposite)):
            out.append(InfractionEvent("opposite_lane", t))

    f0 = w.ego_point(veh.front_offset, before.pose)
    f1 = w.ego_point(veh.front_offset)
    states = w.light_states()
    for lt in w.cfg.lights:
        if segments_cross(f0, f1, *lt.stop_line) and states[lt.id] == Phi.RED:
            out.append(InfractionEvent("red_light", t, (("light", lt.id),)))
    for sign in w.cfg.map.stop_signs:
        a, b = np.asarray(sign.stop_line[0]), np.asarray(sign.stop_line[1])
        if segments_cross(f0, f1, a, b):
            if w.ego.v > STOP_SPEED and not w._stop_ok[sign.id]:
                out.append(InfractionEvent("stop_sign", t, (("sign", sign.id),)))
            w._stop_ok[sign.id] = False
        elif w.ego.v <= STOP_SPEED and _point_segment_distance(f1, a, b) <= STOP_SIGN_WINDOW:
            w._stop_ok[sign.id] = True
    return out


def _point_segment_distance(p, a, b) -> float:
    p = np.asarray(p, dtype=float)
    e = b - a
    t = float(np.clip(np.dot(p - a, e) / max(np.dot(e, e), 1e-18), 0.0, 1.0))
    q = a + t * e
    return float(math.hypot(*(p - q)))


def step_world(w: SimWorld, ego_cmd: tuple[float, float], dt: float | None = None) -> SimWorld:
    if dt is not None and abs(dt - w.cfg.dt) > 1e-12:
        raise ValueError("the world advances only by its fixed step")
    w.step(*ego_cmd)
    return w
