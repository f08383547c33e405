"""Scenario description and its YAML loader.

A scenario file is a mapping with these keys (all distances in metres,
angles in radians unless the key says otherwise):

    name: str
    seed: int
    track_mode: track1 | track2 | track3 | track4
    dt: float                      # simulation step, default 0.05
    speed_limit_kmh: float         # or speed_limit in m/s
    weather: clear | cloudy | rain | fog
    geo_origin: {lat, lon}
    time_limit: float              # optional, derived from route length otherwise
    ego: {pose: [x, y, theta], v: float}
    route: {waypoints: [[x, y], ...], commands: [...]}
    map:
      lanes: [{centerline: [[x, y], ...], width, opposite: bool}]
      sidewalks: [[[x, y], ...], ...]
      stop_signs: [{id, stop_line: [[x, y], [x, y]]}]
      speed_signs: [{position: [x, y], limit_kmh}]
    lights: [{id, position, stop_line, schedule: {green, yellow, red}, offset}]
    actors: [{id, type, length, width, height, motion: {...}, trigger: {...}}]
    sensors: {...}                 # overrides for SensorSpec fields

Actor motion kinds: ``static`` (pose), ``constant_velocity`` (pose, speed)
and ``path`` (waypoints, speed or speed_profile [[t, v], ...]). A trigger
``{ego_distance: d, spawn: bool}`` holds the actor (or keeps it out of the
world when ``spawn`` is set) until the ego's front bumper comes within ``d``
of the actor's start position; profile times count from the trigger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from ..common import GeoPoint, Pose2D
from ..decision import Phi
from ..planner import Route

TRACK_MODES = ("track1", "track2", "track3", "track4")
ACTOR_TYPES = ("vehicle", "pedestrian", "static")
WEATHER_NOISE = {"clear": 1.0, "cloudy": 1.0, "rain": 1.5, "fog": 2.0}


class ScenarioError(ValueError):
    """Malformed scenario; the message starts with the offending field path."""


@dataclass(frozen=True)
class LightSchedule:
    green: float = 10.0
    yellow: float = 3.0
    red: float = 10.0
    offset: float = 0.0

    def __post_init__(self):
        if min(self.green, self.yellow, self.red) <= 0:
            raise ValueError("dwell times must be positive")

    @property
    def cycle(self) -> float:
        return self.green + self.yellow + self.red

    def state_at(self, t: float) -> Phi:
        u = math.fmod(t + self.offset, self.cycle)
        if u < 0:
            u += self.cycle
        if u < self.green:
            return Phi.GREEN
        if u < self.green + self.yellow:
            return Phi.YELLOW
        return Phi.RED


@dataclass(frozen=True)
class TrafficLightSpec:
    id: str
    position: tuple
    stop_line: tuple
    schedule: LightSchedule = LightSchedule()


@dataclass(frozen=True)
class StopSignSpec:
    id: str
    stop_line: tuple


@dataclass(frozen=True)
class SpeedSign:
    position: tuple
    limit: float  # m/s


@dataclass(frozen=True)
class Lane:
    centerline: tuple
    width: float = 3.5
    opposite: bool = False


@dataclass(frozen=True)
class MapSpec:
    lanes: tuple = ()
    sidewalks: tuple = ()
    stop_signs: tuple = ()
    speed_signs: tuple = ()


@dataclass(frozen=True)
class MotionSpec:
    kind: str = "static"
    pose: Pose2D = Pose2D()
    speed: float = 0.0
    waypoints: tuple = ()
    speed_profile: tuple = ()


@dataclass(frozen=True)
class ActorSpec:
    id: str
    type: str
    length: float
    width: float
    height: float
    motion: MotionSpec
    trigger_distance: float | None = None
    spawn_on_trigger: bool = False

    @property
    def start_pose(self) -> Pose2D:
        m = self.motion
        if m.kind == "path":
            (x0, y0), (x1, y1) = m.waypoints[0], m.waypoints[1]
            return Pose2D(x0, y0, math.atan2(y1 - y0, x1 - x0))
        return m.pose


@dataclass(frozen=True)
class SensorSpec:
    gps_sigma: float = 0.5
    gps_rate: float = 10.0
    gps_front_offset: float = 2.85
    lidar: bool = True
    lidar_channels: int = 32
    lidar_upper_deg: float = 15.0
    lidar_lower_deg: float = -30.0
    lidar_rate: float = 20.0
    lidar_range: float = 50.0
    lidar_points_per_second: int = 20000
    lidar_height: float = 2.4
    lidar_noise: float = 0.0
    camera: bool = True
    camera_hfov_deg: float = 40.0
    camera_rows: int = 108
    camera_cols: int = 216
    camera_height: float = 1.8
    camera_x: float = 1.5
    camera_rate: float = 20.0
    camera_range: float = 60.0
    depth_noise: float = 0.0
    detector_range: float = 30.0
    detector_fov_deg: float = 120.0


@dataclass(frozen=True)
class VehicleSpec:
    length: float = 4.6
    width: float = 1.9
    rear_overhang: float = 0.9  # rear bumper to rear axle
    wheelbase: float = 2.85
    max_steer: float = 0.55
    a_throttle: float = 3.0
    a_brake: float = 6.0
    height: float = 1.5

    @property
    def center_offset(self) -> float:
        """Footprint centre ahead of the rear axle."""
        return self.length / 2.0 - self.rear_overhang

    @property
    def front_offset(self) -> float:
        return self.length - self.rear_overhang


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    route: Route
    map: MapSpec = MapSpec()
    actors: tuple = ()
    lights: tuple = ()
    speed_limit: float = 30.0 / 3.6
    weather: str = "clear"
    seed: int = 0
    track_mode: str = "track4"
    dt: float = 0.05
    ego_start: Pose2D | None = None
    ego_speed: float = 0.0
    sensors: SensorSpec = SensorSpec()
    vehicle: VehicleSpec = VehicleSpec()
    geo_origin: GeoPoint = GeoPoint(48.8566, 2.3522)
    time_limit: float | None = None

    def __post_init__(self):
        if self.track_mode not in TRACK_MODES:
            raise ValueError(f"unknown track mode {self.track_mode!r}")
        if self.weather not in WEATHER_NOISE:
            raise ValueError(f"unknown weather {self.weather!r}")
        if self.dt <= 0 or self.speed_limit <= 0:
            raise ValueError("dt and speed_limit must be positive")
        if self.ego_start is None:
            (x0, y0), (x1, y1) = self.route.waypoints[:2]
            object.__setattr__(self, "ego_start", Pose2D(x0, y0, math.atan2(y1 - y0, x1 - x0)))

    @property
    def noise_scale(self) -> float:
        return WEATHER_NOISE[self.weather]


# --- loading ---


def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _get(d: dict, key: str, path: str, kind, default=...):
    if key not in d:
        if default is ...:
            _fail(f"{path}.{key}" if path else key, "required field missing")
        return default
    v = d[key]
    p = f"{path}.{key}" if path else key
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            _fail(p, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            _fail(p, "must be finite")
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            _fail(p, f"expected an integer, got {v!r}")
        return v
    if kind is bool:
        if not isinstance(v, bool):
            _fail(p, f"expected true/false, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str):
            _fail(p, f"expected a string, got {v!r}")
        return v
    if kind is dict:
        if not isinstance(v, dict):
            _fail(p, "expected a mapping")
        return v
    if kind is list:
        if not isinstance(v, list):
            _fail(p, "expected a list")
        return v
    raise TypeError(kind)


def _points(v, path: str, min_len: int = 1) -> tuple:
    if not isinstance(v, list) or len(v) < min_len:
        _fail(path, f"expected a list of at least {min_len} [x, y] points")
    out = []
    for i, p in enumerate(v):
        out.append(_xy(p, f"{path}[{i}]"))
    return tuple(out)


def _xy(p, path: str) -> tuple:
    if (not isinstance(p, list) or len(p) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)):
        _fail(path, f"expected [x, y], got {p!r}")
    return (float(p[0]), float(p[1]))


def _pose(p, path: str) -> Pose2D:
    if (not isinstance(p, list) or len(p) != 3
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)):
        _fail(path, f"expected [x, y, theta], got {p!r}")
    return Pose2D(float(p[0]), float(p[1]), float(p[2]))


def _check_keys(d: dict, allowed, path: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        _fail(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _speed(d: dict, path: str, key: str, default=None):
    if key + "_kmh" in d:
        return _get(d, key + "_kmh", path, float) / 3.6
    if key in d:
        return _get(d, key, path, float)
    return default


def _motion(d, path: str) -> MotionSpec:
    if not isinstance(d, dict):
        _fail(path, "expected a mapping")
    kind = _get(d, "kind", path, str)
    if kind == "static":
        _check_keys(d, ("kind", "pose"), path)
        return MotionSpec(kind, pose=_pose(_get(d, "pose", path, list), f"{path}.pose"))
    if kind == "constant_velocity":
        _check_keys(d, ("kind", "pose", "speed"), path)
        return MotionSpec(kind, pose=_pose(_get(d, "pose", path, list), f"{path}.pose"),
                          speed=_get(d, "speed", path, float))
    if kind == "path":
        _check_keys(d, ("kind", "waypoints", "speed", "speed_profile"), path)
        wps = _points(_get(d, "waypoints", path, list), f"{path}.waypoints", 2)
        profile = ()
        if "speed_profile" in d:
            rows = _get(d, "speed_profile", path, list)
            prof = []
            for i, r in enumerate(rows):
                t, v = _xy(r, f"{path}.speed_profile[{i}]")
                if v < 0:
                    _fail(f"{path}.speed_profile[{i}]", "speed must be non-negative")
                if prof and t <= prof[-1][0]:
                    _fail(f"{path}.speed_profile[{i}]", "times must increase")
                prof.append((t, v))
            if not prof:
                _fail(f"{path}.speed_profile", "must not be empty")
            profile = tuple(prof)
        return MotionSpec(kind, waypoints=wps, speed=_get(d, "speed", path, float, 0.0),
                          speed_profile=profile)
    _fail(f"{path}.kind", f"unknown motion kind {kind!r}")


def _actor(d, path: str) -> ActorSpec:
    if not isinstance(d, dict):
        _fail(path, "expected a mapping")
    _check_keys(d, ("id", "type", "length", "width", "height", "motion", "trigger"), path)
    typ = _get(d, "type", path, str)
    if typ not in ACTOR_TYPES:
        _fail(f"{path}.type", f"must be one of {', '.join(ACTOR_TYPES)}")
    defaults = {"vehicle": (4.6, 1.9, 1.5), "pedestrian": (0.5, 0.5, 1.8), "static": (1.0, 1.0, 1.0)}[typ]
    dims = []
    for key, dv in zip(("length", "width", "height"), defaults):
        v = _get(d, key, path, float, dv)
        if v <= 0:
            _fail(f"{path}.{key}", "must be positive")
        dims.append(v)
    motion = _motion(_get(d, "motion", path, dict), f"{path}.motion")
    trig, spawn = None, False
    if "trigger" in d:
        t = _get(d, "trigger", path, dict)
        _check_keys(t, ("ego_distance", "spawn"), f"{path}.trigger")
        trig = _get(t, "ego_distance", f"{path}.trigger", float)
        spawn = _get(t, "spawn", f"{path}.trigger", bool, False)
    return ActorSpec(str(d.get("id", path)), typ, *dims, motion, trig, spawn)


def _light(d, path: str) -> TrafficLightSpec:
    if not isinstance(d, dict):
        _fail(path, "expected a mapping")
    _check_keys(d, ("id", "position", "stop_line", "schedule", "offset"), path)
    sched = _get(d, "schedule", path, dict, {})
    _check_keys(sched, ("green", "yellow", "red"), f"{path}.schedule")
    dwell = {k: _get(sched, k, f"{path}.schedule", float, dv)
             for k, dv in (("green", 10.0), ("yellow", 3.0), ("red", 10.0))}
    for k, v in dwell.items():
        if v <= 0:
            _fail(f"{path}.schedule.{k}", "dwell time must be positive")
    line = _points(_get(d, "stop_line", path, list), f"{path}.stop_line", 2)
    if len(line) != 2:
        _fail(f"{path}.stop_line", "expected exactly two points")
    return TrafficLightSpec(
        id=str(d.get("id", path)),
        position=_xy(_get(d, "position", path, list), f"{path}.position"),
        stop_line=line,
        schedule=LightSchedule(offset=_get(d, "offset", path, float, 0.0), **dwell),
    )


def _map(d, path: str) -> MapSpec:
    _check_keys(d, ("lanes", "sidewalks", "stop_signs", "speed_signs"), path)
    lanes = []
    for i, ln in enumerate(_get(d, "lanes", path, list, [])):
        p = f"{path}.lanes[{i}]"
        if not isinstance(ln, dict):
            _fail(p, "expected a mapping")
        _check_keys(ln, ("centerline", "width", "opposite"), p)
        w = _get(ln, "width", p, float, 3.5)
        if w <= 0:
            _fail(f"{p}.width", "must be positive")
        lanes.append(Lane(_points(_get(ln, "centerline", p, list), f"{p}.centerline", 2), w,
                          _get(ln, "opposite", p, bool, False)))
    sidewalks = tuple(_points(poly, f"{path}.sidewalks[{i}]", 3)
                      for i, poly in enumerate(_get(d, "sidewalks", path, list, [])))
    stops = []
    for i, s in enumerate(_get(d, "stop_signs", path, list, [])):
        p = f"{path}.stop_signs[{i}]"
        if not isinstance(s, dict):
            _fail(p, "expected a mapping")
        _check_keys(s, ("id", "stop_line"), p)
        line = _points(_get(s, "stop_line", p, list), f"{p}.stop_line", 2)
        stops.append(StopSignSpec(str(s.get("id", p)), line[:2]))
    signs = []
    for i, s in enumerate(_get(d, "speed_signs", path, list, [])):
        p = f"{path}.speed_signs[{i}]"
        if not isinstance(s, dict):
            _fail(p, "expected a mapping")
        _check_keys(s, ("position", "limit", "limit_kmh"), p)
        limit = _speed(s, p, "limit")
        if limit is None or limit <= 0:
            _fail(f"{p}.limit_kmh", "a positive limit is required")
        signs.append(SpeedSign(_xy(_get(s, "position", p, list), f"{p}.position"), limit))
    return MapSpec(tuple(lanes), sidewalks, tuple(stops), tuple(signs))


def _sensors(d, path: str) -> SensorSpec:
    known = {f.name: f for f in fields(SensorSpec)}
    _check_keys(d, known, path)
    kw = {}
    for k, v in d.items():
        default = getattr(SensorSpec, k)
        kind = bool if isinstance(default, bool) else int if isinstance(default, int) else float
        kw[k] = _get(d, k, path, kind)
        if kind is not bool and kw[k] < 0:
            _fail(f"{path}.{k}", "must be non-negative")
    return SensorSpec(**kw)


TOP_KEYS = ("name", "seed", "track_mode", "dt", "speed_limit", "speed_limit_kmh", "weather",
            "geo_origin", "time_limit", "ego", "route", "map", "lights", "actors", "sensors")


def scenario_from_dict(d: dict, default_name: str = "scenario") -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ScenarioError("<root>: expected a mapping")
    _check_keys(d, TOP_KEYS, "")
    route_d = _get(d, "route", "", dict)
    _check_keys(route_d, ("waypoints", "commands"), "route")
    try:
        route = Route(_points(_get(route_d, "waypoints", "route", list), "route.waypoints", 2),
                      tuple(route_d.get("commands", ())))
    except ValueError as e:
        if isinstance(e, ScenarioError):
            raise
        _fail("route", str(e))
    track = _get(d, "track_mode", "", str, "track4")
    if track not in TRACK_MODES:
        _fail("track_mode", f"must be one of {', '.join(TRACK_MODES)}")
    weather = _get(d, "weather", "", str, "clear")
    if weather not in WEATHER_NOISE:
        _fail("weather", f"must be one of {', '.join(WEATHER_NOISE)}")
    dt = _get(d, "dt", "", float, 0.05)
    if dt <= 0:
        _fail("dt", "must be positive")
    limit = _speed(d, "", "speed_limit", 30.0 / 3.6)
    if limit <= 0:
        _fail("speed_limit", "must be positive")
    ego = _get(d, "ego", "", dict, {})
    _check_keys(ego, ("pose", "v"), "ego")
    start = _pose(ego["pose"], "ego.pose") if "pose" in ego else None
    origin = _get(d, "geo_origin", "", dict, {"lat": 48.8566, "lon": 2.3522})
    _check_keys(origin, ("lat", "lon"), "geo_origin")
    try:
        geo = GeoPoint(_get(origin, "lat", "geo_origin", float), _get(origin, "lon", "geo_origin", float))
    except ScenarioError:
        raise
    except ValueError as e:
        _fail("geo_origin", str(e))
    seed = _get(d, "seed", "", int, 0)
    time_limit = _get(d, "time_limit", "", float, None)
    if time_limit is not None and time_limit <= 0:
        _fail("time_limit", "must be positive")
    return ScenarioConfig(
        name=_get(d, "name", "", str, default_name),
        route=route,
        map=_map(_get(d, "map", "", dict, {}), "map"),
        actors=tuple(_actor(a, f"actors[{i}]") for i, a in enumerate(_get(d, "actors", "", list, []))),
        lights=tuple(_light(a, f"lights[{i}]") for i, a in enumerate(_get(d, "lights", "", list, []))),
        speed_limit=limit,
        weather=weather,
        seed=seed,
        track_mode=track,
        dt=dt,
        ego_start=start,
        ego_speed=_get(ego, "v", "ego", float, 0.0),
        sensors=_sensors(_get(d, "sensors", "", dict, {}), "sensors"),
        geo_origin=geo,
        time_limit=time_limit,
    )


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ScenarioError(f"{path}: YAML syntax error at {where}: {getattr(e, 'problem', e)}") from None
    try:
        return scenario_from_dict(data, default_name=path.stem)
    except ScenarioError as e:
        raise ScenarioError(f"{path}: {e}") from None
