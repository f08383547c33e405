import json
import subprocess
import sys

import pytest

from avstack.agent import (Agent, AgentConfig, ConfigError, agent_config_from_dict, agent_tick,
                           load_agent_config, run_scenario)
from avstack.cli import EXIT_CONFIG, EXIT_OK, main
from avstack.sim import SensorRig, SimWorld, scenario_from_dict

SHORT = {"name": "short", "route": {"waypoints": [[0, 0], [40, 0]]}, "time_limit": 30.0,
         "sensors": {"lidar_points_per_second": 60000}}


def cfg(**extra):
    return scenario_from_dict({**SHORT, **extra})


@pytest.mark.parametrize("track, present, absent", [
    ("track1", "lidar_frames", "depth_frames"),
    ("track2", "depth_frames", "lidar_frames"),
    ("track4", "gps_frames", "perception_calls"),
])
def test_track_isolation(track, present, absent):
    result, logs = run_scenario(cfg(track_mode=track))
    assert result.completion == pytest.approx(1.0)
    assert logs.counters.get(present, 0) > 0
    assert logs.counters.get(absent, 0) == 0


def test_missing_sensor_fails_at_startup():
    with pytest.raises(ConfigError, match="lidar"):
        run_scenario(cfg(track_mode="track1", sensors={"lidar": False}))


def test_tick_accelerates_on_empty_road():
    sc = cfg(track_mode="track4")
    w = SimWorld(sc)
    rig = SensorRig(w)
    agent = Agent(sc)
    agent.attach(rig)
    cmd, steer, same = agent_tick(rig.snapshot(w), agent)
    assert same is agent and cmd > 0 and abs(steer) < 0.01
    assert agent.last.action == "ACCELERATE"


def test_decisions_held_between_planning_ticks(tmp_path):
    result, logs = run_scenario(cfg(track_mode="track4"), out_dir=tmp_path)
    times = [json.loads(line)["t"] for line in logs.events.splitlines() if '"decision"' in line]
    assert times[0] == 0.0
    assert all(abs(b - a - 1.0) < 1e-6 for a, b in zip(times, times[1:]))
    assert len(times) == int(result.duration) + 1 or len(times) == int(result.duration)


def test_run_writes_artifacts(tmp_path):
    result, _ = run_scenario(cfg(track_mode="track4"), out_dir=tmp_path)
    for name in ("events.jsonl", "trace.csv", "timing.json", "result.json"):
        assert (tmp_path / name).stat().st_size > 0
    saved = json.loads((tmp_path / "result.json").read_text())
    assert saved["completion"] == pytest.approx(result.completion)
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header.startswith("t,x,y,theta,est_x,est_y,est_theta,v,v_target,command")


def test_agent_config_parsing(tmp_path):
    c = agent_config_from_dict({"mdp_budget": 512, "pi": {"kp": 0.5}, "ekf": {"r_diag": [1, 1, 1]}})
    assert c.mdp_budget == 512 and c.pi.kp == 0.5 and c.ekf.r_diag == (1, 1, 1)
    for bad, msg in [({"nope": 1}, "nope"), ({"pi": {"kx": 1}}, r"pi\.kx"), ({"pi": 3}, "pi"),
                     ({"decision_rate": 30.0}, "decision rate"), ({"track_mode": "track7"}, "track7")]:
        with pytest.raises(ConfigError, match=msg):
            agent_config_from_dict(bad)
    p = tmp_path / "a.yaml"
    p.write_text("pi: {kp: [1\n")
    with pytest.raises(ConfigError, match="line"):
        load_agent_config(p)


def test_invalid_rates():
    with pytest.raises(ConfigError):
        AgentConfig(control_rate=0.0)


def test_cli_run_and_score(tmp_path, scenario_dir, capsys):
    out = tmp_path / "run"
    assert main(["run", str(scenario_dir / "straight_empty.yaml"), "--out", str(out), "--track", "4"]) == EXIT_OK
    assert (out / "result.json").exists()
    assert main(["score", str(out), "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out.split("logs written to")[-1].split("\n", 1)[1])
    assert report["total"] == pytest.approx(100.0)


def test_cli_suite(tmp_path, capsys):
    d = tmp_path / "scen"
    d.mkdir()
    for k in range(2):
        (d / f"s{k}.yaml").write_text(json.dumps({**SHORT, "name": f"s{k}", "track_mode": "track4"}))
    assert main(["suite", str(d), "--out", str(tmp_path / "out"), "--workers", "2"]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(report["rows"]) == 2 and report["total"] == pytest.approx(100.0)


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nactors: [{type: car}]\nroute: {waypoints: [[0, 0], [1, 0]]}\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "actors[0].type" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    junk = tmp_path / "r.json"
    junk.write_text("{}")
    assert main(["score", str(junk)]) == EXIT_CONFIG


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "avstack.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "suite" in r.stdout


def test_example_agent_config_loads(scenario_dir):
    c = load_agent_config(scenario_dir.parent / "configs" / "agent_example.yaml")
    assert c.track_mode == "track1" and c.pi.kp == 0.5
