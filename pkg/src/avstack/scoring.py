"""Route completion, infraction points and the aggregate driving score."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .planner import DensePath, project_to_path
from .sim.world import INFRACTION_POINTS, InfractionEvent

ABANDON_RADIUS = 5.0


@dataclass(frozen=True)
class RouteResult:
    route_id: str
    repetition: int = 0
    completion: float = 0.0
    infractions: tuple = ()
    duration: float = 0.0
    timed_out: bool = False

    def __post_init__(self):
        if not 0.0 <= self.completion <= 1.0:
            raise ValueError("completion must lie in [0, 1]")
        object.__setattr__(self, "infractions", tuple(self.infractions))

    @property
    def points(self) -> int:
        return sum(ev.points for ev in self.infractions)

    @property
    def score(self) -> float:
        return row_score(self.completion, self.points)

    def to_dict(self) -> dict:
        return {
            "route_id": self.route_id,
            "repetition": self.repetition,
            "completion": self.completion,
            "infraction_points": self.points,
            "infractions": [ev.to_dict() for ev in self.infractions],
            "duration": self.duration,
            "timed_out": self.timed_out,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteResult":
        evs = tuple(InfractionEvent(e["kind"], float(e["time"]),
                                    tuple((k, v) for k, v in sorted(e.items())
                                          if k not in ("kind", "time", "points")))
                    for e in d.get("infractions", []))
        return cls(str(d["route_id"]), int(d.get("repetition", 0)), float(d["completion"]), evs,
                   float(d.get("duration", 0.0)), bool(d.get("timed_out", False)))


def row_score(completion: float, points: float) -> float:
    return max(100.0 * completion - points, 0.0)


class RouteProgress:
    """Running maximum of path progress, frozen once the vehicle strays too far."""

    def __init__(self, path: DensePath, abandon_radius: float = ABANDON_RADIUS):
        self.path = path
        self.abandon_radius = abandon_radius
        self.best = 0.0
        self.frozen = False

    def update(self, xy) -> float:
        if not self.frozen:
            s, lateral = project_to_path(xy, self.path)
            if abs(lateral) > self.abandon_radius:
                self.frozen = True
            else:
                self.best = max(self.best, s)
        return self.completion

    @property
    def completion(self) -> float:
        return min(1.0, self.best / self.path.length)


def route_completion(path: DensePath, trace) -> float:
    trace = np.asarray(trace, dtype=float).reshape(-1, 2)
    if len(trace) == 0:
        raise ValueError("empty trace")
    prog = RouteProgress(path)
    for p in trace:
        prog.update(p)
    return prog.completion


def time_limit(path_length: float, speed_limit: float, slack: float = 60.0) -> float:
    return path_length / (0.5 * speed_limit) + slack


@dataclass
class ScoreReport:
    rows: list = field(default_factory=list)  # (route_id, repetition, C, I, row score)
    route_points: float = 0.0
    infraction_points: float = 0.0
    total: float = 0.0
    by_kind: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [{"route_id": r, "repetition": k, "completion": c, "infraction_points": i, "score": s}
                     for r, k, c, i, s in self.rows],
            "route_points": self.route_points,
            "infraction_points": self.infraction_points,
            "total": self.total,
            "infractions_by_kind": self.by_kind,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        head = f"{'route':<28}{'rep':>4}{'C':>8}{'I':>6}{'score':>9}"
        lines = [head, "-" * len(head)]
        for r, k, c, i, s in self.rows:
            lines.append(f"{r:<28}{k:>4}{c:>8.3f}{i:>6}{s:>9.2f}")
        lines.append("-" * len(head))
        lines.append(f"{'route points':<28}{self.route_points:>27.2f}")
        lines.append(f"{'infraction points':<28}{self.infraction_points:>27.2f}")
        lines.append(f"{'total':<28}{self.total:>27.2f}")
        if self.by_kind:
            lines.append("")
            for kind in INFRACTION_POINTS:
                if kind in self.by_kind:
                    n, pts = self.by_kind[kind]
                    lines.append(f"  {kind:<18}{n:>4} x {INFRACTION_POINTS[kind]} = {pts}")
        return "\n".join(lines)


def score(results) -> ScoreReport:
    """Mean over all rows of max(100 C - I, 0), plus per-kind infraction tallies."""
    results = sorted(results, key=lambda r: (r.route_id, r.repetition))
    if not results:
        raise ValueError("no results to score")
    rows = [(r.route_id, r.repetition, r.completion, r.points, r.score) for r in results]
    counts = Counter(ev.kind for r in results for ev in r.infractions)
    n = len(results)
    return ScoreReport(
        rows=rows,
        route_points=100.0 * sum(r.completion for r in results) / n,
        infraction_points=sum(r.points for r in results) / n,
        total=sum(row[-1] for row in rows) / n,
        by_kind={k: (counts[k], counts[k] * INFRACTION_POINTS[k]) for k in INFRACTION_POINTS if counts[k]},
    )
