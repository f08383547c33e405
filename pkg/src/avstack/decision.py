"""Longitudinal tactical decisions as a small MDP.

State is (speed, distance to next light, light colour, distance to the
vehicle ahead). Three actions change speed by a fixed rate. The world model
used for planning is deterministic kinematics plus a Markov chain over the
light colour; the reward penalizes deviation from a rule-based reference
speed. ``plan_action`` searches it online with UCT; ``value_iteration_oracle``
solves a discretized copy exactly and exists to check the planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels


class Phi(IntEnum):
    GREEN = 0
    YELLOW = 1
    RED = 2
    NONE = 3


class MdpAction(IntEnum):
    BRAKE = 0
    STAY_CONSTANT = 1
    ACCELERATE = 2

    def accel(self, params: "MdpParams") -> float:
        return (params.a_brake, params.a_stay, params.a_accelerate)[self]


@dataclass(frozen=True)
class MdpState:
    v: float
    d_phi: float = math.inf
    phi: Phi = Phi.NONE
    d_v: float = math.inf

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("speed must be non-negative")
        if self.d_phi < 0 or self.d_v < 0:
            raise ValueError("distances must be non-negative")
        object.__setattr__(self, "phi", Phi(self.phi))


@dataclass(frozen=True)
class MdpParams:
    dt: float = 1.0
    gamma: float = 0.95
    a_brake: float = -4.0
    a_stay: float = 0.0
    a_accelerate: float = 2.0
    p1: float = 0.05
    p2: float = 0.6
    p3: float = 0.05
    stop_dist_tl: float = 12.0
    stop_dist_veh: float = 2.0
    v_limit: float = 30.0 / 3.6
    v_ref_margin: float = 0.3
    v_max_factor: float = 1.2
    # planner knobs
    depth: int = 10
    exploration: float = 1.0
    greedy_rollout: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("p1", "p2", "p3"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.dt <= 0 or self.v_limit <= 0:
            raise ValueError("dt and v_limit must be positive")

    @property
    def v_max(self) -> float:
        return self.v_limit * self.v_max_factor

    @property
    def v_cruise(self) -> float:
        return self.v_limit - self.v_ref_margin

    def kernel_tuple(self) -> tuple:
        # exploration is scaled by the largest single-step penalty
        c = self.exploration * self.v_max**2
        return (self.dt, self.gamma, self.p1, self.p2, self.p3, self.a_brake, self.a_stay,
                self.a_accelerate, self.v_max, self.v_cruise, self.stop_dist_tl,
                self.stop_dist_veh, c, self.greedy_rollout)


def light_transition_matrix(params: MdpParams) -> np.ndarray:
    """Row-stochastic matrix over (GREEN, YELLOW, RED, NONE)."""
    p1, p2, p3 = params.p1, params.p2, params.p3
    return np.array([
        [1 - p1, p1, 0.0, 0.0],
        [0.0, 1 - p2, p2, 0.0],
        [p3, 0.0, 1 - p3, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def next_phi(phi: Phi, u: float, params: MdpParams) -> Phi:
    if phi == Phi.GREEN:
        return Phi.YELLOW if u < params.p1 else Phi.GREEN
    if phi == Phi.YELLOW:
        return Phi.RED if u < params.p2 else Phi.YELLOW
    if phi == Phi.RED:
        return Phi.GREEN if u < params.p3 else Phi.RED
    return phi


def mdp_step(s: MdpState, a: MdpAction, params: MdpParams, rng) -> MdpState:
    """Sample a successor. ``rng`` needs a ``random()`` method returning [0, 1)."""
    dt = params.dt
    v = min(max(s.v + MdpAction(a).accel(params) * dt, 0.0), params.v_max)
    return MdpState(
        v=v,
        d_phi=max(0.0, s.d_phi - s.v * dt),
        phi=next_phi(s.phi, rng.random(), params),
        d_v=max(0.0, s.d_v - s.v * dt),
    )


def reference_speed(s: MdpState, params: MdpParams) -> float:
    if s.d_v < params.stop_dist_veh or (s.phi == Phi.RED and s.d_phi < params.stop_dist_tl):
        return 0.0
    return params.v_cruise


def reward(s: MdpState, params: MdpParams) -> float:
    e = s.v - reference_speed(s, params)
    return -(e * e)


def plan_action_values(s: MdpState, params: MdpParams, budget: int = 4096, seed: int = 0):
    """Run UCT from ``s``; returns (action, root action values, root visit counts)."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    a, q, n = kernels.uct_plan(float(s.v), float(s.d_phi), int(s.phi), float(s.d_v),
                               params.kernel_tuple(), int(budget), int(params.depth), int(seed))
    return MdpAction(a), q, n


def plan_action(s: MdpState, params: MdpParams, budget: int = 4096, seed: int = 0) -> MdpAction:
    return plan_action_values(s, params, budget, seed)[0]


# --- exact solver on a grid, used as a test oracle ---


@dataclass(frozen=True)
class Discretization:
    v_step: float = 1.0
    d_step: float = 1.0
    d_max: float = 100.0


@dataclass
class TabularPolicy:
    """Converged values on the grid; the last distance index stands for infinity."""

    v_grid: np.ndarray
    d_grid: np.ndarray
    q: np.ndarray  # (nv, nd, 4, nd, 3)
    value: np.ndarray  # (nv, nd, 4, nd)
    iterations: int

    @property
    def policy(self) -> np.ndarray:
        return np.argmax(self.q, axis=-1)

    def index(self, s: MdpState) -> tuple[int, int, int, int]:
        return (_snap(self.v_grid, s.v), _snap_d(self.d_grid, s.d_phi), int(s.phi),
                _snap_d(self.d_grid, s.d_v))

    def state(self, iv, idphi, iphi, idv) -> MdpState:
        return MdpState(float(self.v_grid[iv]), float(self.d_grid[idphi]), Phi(iphi),
                        float(self.d_grid[idv]))

    def action(self, s: MdpState) -> MdpAction:
        return MdpAction(int(self.policy[self.index(s)]))

    def action_values(self, s: MdpState) -> np.ndarray:
        return self.q[self.index(s)]


def _snap(grid, x):
    return int(np.argmin(np.abs(grid - x)))


def _snap_d(grid, d):
    if math.isinf(d):
        return len(grid) - 1
    return _snap(grid[:-1], min(d, grid[-2]))


def value_iteration_oracle(params: MdpParams, grid: Discretization = Discretization(),
                           tol: float = 1e-6, max_iter: int = 5000) -> TabularPolicy:
    """Solve the discretized MDP by value iteration.

    Speeds take ``v_step``-spaced values in [0, v_max] (v_max always on the
    grid), distances take ``d_step``-spaced values in [0, d_max] plus an
    infinity bucket. Kinematics are deterministic and snapped to the nearest
    grid point; only the light colour is stochastic.
    """
    n_v = int(round(params.v_max / grid.v_step))
    v_grid = np.arange(n_v + 1) * grid.v_step
    v_grid = np.append(v_grid[v_grid < params.v_max - 1e-6], params.v_max)
    n_d = int(round(grid.d_max / grid.d_step))
    d_grid = np.append(np.arange(n_d + 1) * grid.d_step, np.inf)
    nv, nd = len(v_grid), len(d_grid)
    dt = params.dt
    T = light_transition_matrix(params)

    def snap_d(d):
        idx = np.clip(np.rint(d / grid.d_step), 0, n_d).astype(int)
        return np.where(np.isinf(d), nd - 1, idx)

    # successor distance index for each (v index, d index)
    with np.errstate(invalid="ignore"):
        d_next = np.maximum(0.0, d_grid[None, :] - v_grid[:, None] * dt)
    d_next_idx = snap_d(d_next)  # (nv, nd)

    phis = np.arange(4)
    vref_cruise = params.v_cruise
    # reward of landing in (v', dphi', phi', dv')
    stop = (d_grid[None, None, :] < params.stop_dist_veh) | (
        (phis[None, :, None] == Phi.RED) & (d_grid[:, None, None] < params.stop_dist_tl))
    vref = np.where(stop, 0.0, vref_cruise)  # (nd_phi, 4, nd_v)
    R = -(v_grid[:, None, None, None] - vref[None]) ** 2  # (nv, nd, 4, nd)

    accels = [MdpAction(a).accel(params) for a in range(3)]
    v_next_idx = [
        np.array([_snap(v_grid, min(max(v + acc * dt, 0.0), params.v_max)) for v in v_grid])
        for acc in accels
    ]
    iv = np.arange(nv)[:, None, None]
    dphi_i = d_next_idx[:, :, None]
    dv_i = d_next_idx[:, None, :]

    value = np.zeros((nv, nd, 4, nd))
    q = np.zeros((nv, nd, 4, nd, 3))
    it = 0
    for it in range(1, max_iter + 1):
        target = R + params.gamma * value  # (nv, nd, 4, nd) indexed by successor
        for a in range(3):
            # gather successor slices: (nv, nd_phi, 4 phi', nd_v)
            succ = target[v_next_idx[a][iv], dphi_i, :, dv_i]  # -> (nv, nd, nd, 4)
            q[..., a] = np.einsum("ijkp,qp->ijqk", succ, T)
        new_value = q.max(axis=-1)
        delta = np.max(np.abs(new_value - value))
        value = new_value
        if delta < tol:
            break
    return TabularPolicy(v_grid=v_grid, d_grid=d_grid, q=q, value=value, iterations=it)
