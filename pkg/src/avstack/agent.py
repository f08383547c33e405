"""Agent wiring (sensing -> perception -> risk -> decision -> control) and the scenario runner."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from collections import defaultdict
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from .common import Pose2D, VehicleState
from .control import LateralController, MpcParams, PiParams, pi_speed_control
from .decision import MdpAction, MdpParams, MdpState, Phi, plan_action, reference_speed
from .localization import ControlInput, EkfParams, Localizer
from .perception import DetectionStats, GridSpec, depth_to_cloud, detect_obstacles, virtual_scan_filter
from .planner import densify_route, project_to_path
from .risk import Zone, ZoneConfig, detect_conflicts
from .scoring import RouteProgress, RouteResult, time_limit
from .sim.scenario import ScenarioConfig, load_scenario
from .sim.sensors import SensorRig, SensorSnapshot
from .sim.world import EventLog, SimWorld

TRACK_NEEDS = {
    "track1": ("gps", "can", "lidar"),
    "track2": ("gps", "can", "camera"),
    "track3": ("gps", "can", "lidar"),
    "track4": ("gps", "can", "objects"),
}
STOP_SIGN_LEAD = 6.0  # stop signs are presented to the planner this much closer


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    track_mode: str | None = None  # None follows the scenario
    ekf: EkfParams = EkfParams(q_diag=(0.1**2, 0.1**2, 0.01**2), r_diag=(0.5**2, 0.5**2, 0.25**2))
    grid: GridSpec = GridSpec()
    eps: float = 0.5
    min_pts: int = 4
    dot_threshold: float = 0.985
    proximity: float = 1.0
    danger_min: float = 5.0
    danger_time: float = 1.5
    warning_min: float = 15.0
    warning_time: float = 4.0
    predict_horizon: float = 4.0
    predict_dt: float = 0.5
    mdp: MdpParams = MdpParams()
    mdp_budget: int = 2048
    mpc: MpcParams = MpcParams()
    pi: PiParams = PiParams()
    control_rate: float = 20.0
    decision_rate: float = 1.0
    min_planning_speed: float = 1.0

    def __post_init__(self):
        if self.control_rate <= 0 or self.decision_rate <= 0:
            raise ConfigError("rates must be positive")
        if self.decision_rate > self.control_rate:
            raise ConfigError("decision rate cannot exceed control rate")
        if self.track_mode is not None and self.track_mode not in TRACK_NEEDS:
            raise ConfigError(f"unknown track mode {self.track_mode!r}")

    def zones(self, v: float, front_offset: float) -> ZoneConfig:
        # zone extents count from the front bumper; dtc counts from the rear axle
        return ZoneConfig(
            danger_end=front_offset + max(self.danger_min, self.danger_time * v),
            warning_end=front_offset + max(self.warning_min, self.warning_time * v),
            proximity_threshold=self.proximity,
            horizon=self.predict_horizon,
            dt=self.predict_dt,
        )


_NESTED = {"ekf": EkfParams, "grid": GridSpec, "mdp": MdpParams, "mpc": MpcParams, "pi": PiParams}


def agent_config_from_dict(d: dict) -> AgentConfig:
    if not isinstance(d, dict):
        raise ConfigError("agent config: expected a mapping")
    known = {f.name for f in fields(AgentConfig)}
    kw = {}
    for k, v in d.items():
        if k not in known:
            raise ConfigError(f"{k}: unknown field")
        if k in _NESTED:
            if not isinstance(v, dict):
                raise ConfigError(f"{k}: expected a mapping")
            sub = {f.name for f in fields(_NESTED[k])}
            for kk in v:
                if kk not in sub:
                    raise ConfigError(f"{k}.{kk}: unknown field")
            vals = {kk: tuple(vv) if isinstance(vv, list) else vv for kk, vv in v.items()}
            try:
                kw[k] = _NESTED[k](**vals)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{k}: {e}") from None
        else:
            kw[k] = v
    try:
        return AgentConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_agent_config(path) -> AgentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML syntax error at {where}") from None
    try:
        return agent_config_from_dict(data)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


@dataclass
class TickRecord:
    t: float
    est: tuple
    v: float
    v_target: float
    command: float
    steer: float
    action: str
    emergency: bool
    d_phi: float
    phi: str
    d_v: float


class Agent:
    """Holds per-vehicle state across control ticks."""

    def __init__(self, scenario: ScenarioConfig, cfg: AgentConfig = AgentConfig(),
                 log: EventLog | None = None, seed: int | None = None):
        self.scenario = scenario
        self.cfg = cfg
        self.track = cfg.track_mode or scenario.track_mode
        self.log = log if log is not None else EventLog()
        self.seed = scenario.seed if seed is None else seed
        self.path = densify_route(scenario.route)
        self.veh = scenario.vehicle
        self.localizer = Localizer(cfg.ekf)
        self.lateral = LateralController(cfg.mpc)
        self.mdp = replace(cfg.mdp, v_limit=scenario.speed_limit)
        self.speed_signs = sorted(
            ((project_to_path(s.position, self.path)[0], s.limit) for s in scenario.map.speed_signs))
        self.integral = 0.0
        self.action = MdpAction.STAY_CONSTANT
        self.v_target = 0.0
        self.decisions = 0
        self.next_decision = 0.0
        self.ticks = 0
        self.emergency = False
        self.boxes: list = []
        self.cleared_signs: set = set()
        self.counters = defaultdict(int)
        self.timing = defaultdict(float)
        self.detection = DetectionStats()
        self.last: TickRecord | None = None

    def check_sensors(self, available) -> None:
        missing = [s for s in TRACK_NEEDS[self.track] if s not in available]
        if missing:
            raise ConfigError(f"{self.track} needs sensors {', '.join(missing)} which the scenario does not provide")

    def attach(self, rig: SensorRig) -> None:
        self.localizer.zone = rig.frame.zone
        self.localizer.origin = (rig.frame.easting, rig.frame.northing)
        self.check_sensors(rig.available)

    # --- pipeline stages ---

    def _localize(self, snap: SensorSnapshot, dt: float):
        t0 = time.perf_counter()
        can = snap.can
        kappa = math.tan(can.steer) / self.veh.wheelbase
        if self.ticks > 0:
            self.localizer.predict(ControlInput(can.v, kappa, dt))
        if snap.gps is not None:
            self.counters["gps_frames"] += 1
            self.localizer.correct(snap.gps.back, snap.gps.front)
        self.timing["localization"] += time.perf_counter() - t0
        st = self.localizer.state
        if st is None:
            return None
        x, y, th = st.mean
        steer = max(-self.veh.max_steer, min(self.veh.max_steer, can.steer))
        return VehicleState(Pose2D(x, y, th), can.v, steer, self.veh.wheelbase, self.veh.max_steer)

    def _obstacles(self, snap: SensorSnapshot, ego: VehicleState) -> list:
        t0 = time.perf_counter()
        if self.track == "track4":
            if snap.objects is not None:
                self.boxes = [o.box for o in snap.objects.objects]
        elif self.track in ("track1", "track3"):
            if snap.lidar is not None:
                self.counters["lidar_frames"] += 1
                self.counters["perception_calls"] += 1
                local = detect_obstacles(snap.lidar, self.cfg.grid, self.cfg.eps, self.cfg.min_pts, self.detection)
                self.boxes = [b.transformed(ego.pose) for b in local]
        elif self.track == "track2":
            if snap.depth is not None:
                self.counters["depth_frames"] += 1
                self.counters["perception_calls"] += 1
                img = virtual_scan_filter(snap.depth, self.cfg.dot_threshold)
                local = detect_obstacles(depth_to_cloud(img), self.cfg.grid, self.cfg.eps, self.cfg.min_pts,
                                         self.detection)
                self.boxes = [b.transformed(ego.pose) for b in local]
        self.timing["perception"] += time.perf_counter() - t0
        return self.boxes

    def _light_state(self, snap: SensorSnapshot, s_front: float, v: float) -> tuple[float, Phi]:
        best = (math.inf, Phi.NONE)
        if snap.objects is None:
            return best
        for info in snap.objects.lights:
            mid = ((info.stop_line[0][0] + info.stop_line[1][0]) / 2.0,
                   (info.stop_line[0][1] + info.stop_line[1][1]) / 2.0)
            s_line, lat = project_to_path(mid, self.path)
            if abs(lat) > 4.0 or s_line >= self.path.length:
                continue
            d = s_line - s_front
            if d < -0.5:
                continue
            d = max(d, 0.0)
            phi = info.state
            if info.kind == "stop_sign":
                if info.id in self.cleared_signs:
                    continue
                if v < 0.1 and d <= 5.0:
                    self.cleared_signs.add(info.id)
                    self.log.emit(snap.t, "stop_sign_cleared", sign=info.id)
                    continue
                d = max(0.0, d - STOP_SIGN_LEAD)
            if d < best[0]:
                best = (d, phi)
        return best

    def tick(self, snap: SensorSnapshot) -> tuple[float, float]:
        """One control cycle: returns (throttle/brake in [-1, 1], steering angle)."""
        dt = 1.0 / self.cfg.control_rate
        ego = self._localize(snap, dt)
        self.ticks += 1
        if ego is None:
            return -1.0, 0.0
        s_ego, _ = project_to_path((ego.pose.x, ego.pose.y), self.path)
        for s_sign, limit in self.speed_signs:
            if s_ego >= s_sign and self.mdp.v_limit != limit:
                self.mdp = replace(self.mdp, v_limit=limit)
                self.log.emit(snap.t, "speed_limit", limit=round(limit, 6))

        boxes = self._obstacles(snap, ego)
        t0 = time.perf_counter()
        zones = self.cfg.zones(ego.v, self.veh.front_offset)
        conflicts = detect_conflicts(self.path, ego, boxes, zones)
        self.timing["risk"] += time.perf_counter() - t0
        danger = [c for c in conflicts if c.zone == Zone.DANGER]
        d_v = min((max(0.0, c.dtc - self.veh.front_offset) for c in conflicts), default=math.inf)
        d_phi, phi = self._light_state(snap, s_ego + self.veh.front_offset, ego.v)
        state = MdpState(v=ego.v, d_phi=d_phi, phi=phi, d_v=d_v)

        t0 = time.perf_counter()
        if snap.t >= self.next_decision - 1e-9:
            seed = (self.seed * 1_000_003 + self.decisions) & 0xFFFFFFFF
            self.action = plan_action(state, self.mdp, self.cfg.mdp_budget, seed)
            self.v_target = ego.v
            self.decisions += 1
            self.next_decision += 1.0 / self.cfg.decision_rate
            self.log.emit(snap.t, "decision", action=self.action.name, v=round(ego.v, 6),
                          d_phi=_num(d_phi), phi=phi.name, d_v=_num(d_v))
        self.timing["decision"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        v_ref = reference_speed(state, self.mdp)
        self.v_target = min(max(self.v_target + self.action.accel(self.mdp) * dt, 0.0), v_ref)
        if danger:
            if not self.emergency:
                self.log.emit(snap.t, "emergency_brake", obstacle=danger[0].obstacle_id,
                              dtc=round(danger[0].dtc, 6))
            self.emergency = True
            command = -1.0
            self.integral = 0.0
            self.v_target = 0.0
        else:
            if self.emergency:
                self.log.emit(snap.t, "emergency_clear")
            self.emergency = False
            command, self.integral = pi_speed_control(self.v_target, ego.v, self.cfg.pi, self.integral, dt)
        v_plan = max(self.v_target, ego.v, self.cfg.min_planning_speed)
        steer = self.lateral.steer(ego, self.path, v_plan, dt)
        self.timing["control"] += time.perf_counter() - t0
        self.last = TickRecord(snap.t, (ego.pose.x, ego.pose.y, ego.pose.theta), ego.v, self.v_target,
                               command, steer, self.action.name, self.emergency, d_phi, phi.name, d_v)
        return command, steer


def _num(x: float):
    return None if math.isinf(x) else round(x, 6)


def agent_tick(snapshot: SensorSnapshot, agent: Agent) -> tuple[float, float, Agent]:
    command, steer = agent.tick(snapshot)
    return command, steer, agent


@dataclass
class RunLogs:
    events: str
    trace: str
    timing: dict
    counters: dict
    sensor_frames: dict


TRACE_FIELDS = ("t", "x", "y", "theta", "est_x", "est_y", "est_theta", "v", "v_target", "command",
                "steer", "action", "emergency", "completion")


def run_scenario(scenario, agent_cfg: AgentConfig | None = None, seed: int | None = None,
                 out_dir=None, track: str | None = None, repetition: int = 0) -> tuple[RouteResult, RunLogs]:
    """Step world and agent until the route is done or the time limit hits."""
    cfg = scenario if isinstance(scenario, ScenarioConfig) else load_scenario(scenario)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if track is not None:
        cfg = replace(cfg, track_mode=track)
    agent_cfg = agent_cfg or AgentConfig()
    if agent_cfg.track_mode is not None and track is None:
        cfg = replace(cfg, track_mode=agent_cfg.track_mode)

    world = SimWorld(cfg)
    rig = SensorRig(world)
    agent = Agent(cfg, replace(agent_cfg, track_mode=cfg.track_mode), world.log)
    agent.attach(rig)
    control_every = max(1, int(round(1.0 / (agent_cfg.control_rate * cfg.dt))))

    progress = RouteProgress(agent.path)
    progress.update(world.ego_point(0.0))
    limit = cfg.time_limit or time_limit(agent.path.length, cfg.speed_limit)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    command, steer = 0.0, 0.0
    timed_out = False
    wall = time.perf_counter()
    while progress.completion < 1.0:
        if world.time >= limit - 1e-9:
            timed_out = True
            break
        snap = rig.snapshot(world)
        if world.step_index % control_every == 0:
            command, steer = agent.tick(snap)
        rec = agent.last
        p = world.ego.pose
        writer.writerow([
            f"{world.time:.3f}", f"{p.x:.6f}", f"{p.y:.6f}", f"{p.theta:.6f}",
            *(f"{v:.6f}" for v in (rec.est if rec else (math.nan,) * 3)),
            f"{world.ego.v:.6f}", f"{rec.v_target if rec else 0.0:.6f}", f"{command:.6f}", f"{steer:.6f}",
            rec.action if rec else "", int(rec.emergency) if rec else 0, f"{progress.completion:.6f}",
        ])
        world.step(command, steer)
        progress.update(world.ego_point(0.0))
    world.log.emit(world.time, "route_end", completion=round(progress.completion, 6), timed_out=timed_out)
    result = RouteResult(cfg.name, repetition, progress.completion, tuple(world.infractions),
                         round(world.time, 6), timed_out)
    timing = dict(agent.timing)
    timing["wall"] = time.perf_counter() - wall
    timing["ticks"] = agent.ticks
    logs = RunLogs(world.log.dumps(), buf.getvalue(), timing, dict(agent.counters), dict(rig.frames))
    if out_dir is not None:
        write_run(out_dir, result, logs)
    return result, logs


def write_run(out_dir, result: RouteResult, logs: RunLogs) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.jsonl").write_text(logs.events)
    (out / "trace.csv").write_text(logs.trace)
    (out / "timing.json").write_text(json.dumps(
        {"seconds": logs.timing, "counters": logs.counters, "sensor_frames": logs.sensor_frames},
        indent=2, sort_keys=True))
    (out / "result.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
