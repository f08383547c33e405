"""Command line entry point: run one scenario, a suite of them, or score saved results."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .agent import AgentConfig, ConfigError, load_agent_config, run_scenario
from .scoring import RouteResult, score
from .sim.scenario import ScenarioError

EXIT_OK = 0
EXIT_CONFIG = 2


def _track(v: str) -> str:
    v = v.removeprefix("track")
    if v not in ("1", "2", "3", "4"):
        raise argparse.ArgumentTypeError("track must be 1, 2, 3 or 4")
    return f"track{v}"


def _agent(path) -> AgentConfig:
    return load_agent_config(path) if path else AgentConfig()


def _run_one(args: tuple):
    scenario, agent_path, seed, out, track = args
    result, _ = run_scenario(scenario, _agent(agent_path), seed, out, track)
    return result


def cmd_run(ns) -> int:
    out = Path(ns.out) if ns.out else Path("runs") / Path(ns.scenario).stem
    result = _run_one((ns.scenario, ns.agent, ns.seed, out, ns.track))
    report = score([result])
    print(report.table())
    print(f"\nlogs written to {out}")
    return EXIT_OK


def cmd_suite(ns) -> int:
    files = sorted(Path(ns.dir).glob("*.yaml")) + sorted(Path(ns.dir).glob("*.yml"))
    if not files:
        print(f"no scenario files in {ns.dir}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(ns.out) if ns.out else Path("runs") / "suite"
    jobs = [(str(f), ns.agent, ns.seed, out / f.stem, ns.track) for f in files]
    # parse everything up front so config errors surface before any run starts
    from .sim.scenario import load_scenario
    for f in files:
        load_scenario(f)
    _agent(ns.agent)
    if ns.workers > 1:
        with ProcessPoolExecutor(max_workers=ns.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    report = score(results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.table() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_score(ns) -> int:
    results = []
    for p in ns.results:
        p = Path(p)
        if p.is_dir():
            p = p / "result.json"
        results.append(RouteResult.from_dict(json.loads(p.read_text())))
    report = score(results)
    print(report.to_json() if ns.json else report.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avstack", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--agent", help="agent config YAML")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--track", type=_track, help="track mode override (1-4)")

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("scenario")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run every scenario in a directory")
    p.add_argument("dir")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("score", help="aggregate result.json files (or run directories)")
    p.add_argument("results", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_score)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except (ScenarioError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, json.JSONDecodeError) as e:
        print(f"error: malformed result file: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
