"""Lateral MPC over the kinematic bicycle model and longitudinal PI speed control."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .common import VehicleState, normalize_angles
from .planner import DensePath, project_to_path


class PathTooShort(ValueError):
    pass


@dataclass(frozen=True)
class MpcParams:
    dt: float = 1.0
    horizon: float = 4.0
    c_x: float = 5.0
    c_y: float = 5.0
    c_theta: float = 10.0
    c_kappa: float = 100.0
    c_tau: float = 10.0
    kappa_max: float = 0.22
    tau_max: float = 0.5
    max_iter: int = 200
    tol: float = 1e-8
    # Euler sub-steps per horizon step for the prediction model
    substeps: int = 10

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        n = self.horizon / self.dt
        if n < 1 - 1e-9 or abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be a positive integer multiple of dt")
        if min(self.c_x, self.c_y, self.c_theta, self.c_kappa, self.c_tau) < 0:
            raise ValueError("weights must be non-negative")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class MpcSolution:
    tau_sequence: np.ndarray
    states: np.ndarray  # (steps + 1, 4): initial state then one row per step
    cost: float


@dataclass(frozen=True)
class PiParams:
    kp: float = 0.5
    ki: float = 0.1
    integral_limit: float = 5.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.integral_limit <= 0:
            raise ValueError("need kp, ki >= 0 and integral_limit > 0")


def bicycle_step(state, v: float, tau: float, dt: float, kappa_max: float = 0.22):
    x, y, th, k = state
    return (
        x + v * math.cos(th) * dt,
        y + v * math.sin(th) * dt,
        th + v * k * dt,
        min(max(k + tau * dt, -kappa_max), kappa_max),
    )


def rollout(state0, v: float, taus, params: MpcParams) -> np.ndarray:
    out = np.empty((len(taus) + 1, 4))
    out[0] = state0
    s = tuple(state0)
    h = params.dt / params.substeps
    for i, tau in enumerate(taus):
        for _ in range(params.substeps):
            s = bicycle_step(s, v, float(tau), h, params.kappa_max)
        out[i + 1] = s
    return out


def mpc_cost(states, reference, taus, params: MpcParams) -> float:
    """Quadratic tracking cost over predicted states 1..H plus steering-rate effort.

    ``states`` has H+1 rows (the first is the current state and is not
    penalized); ``reference`` has H rows of (x, y, theta, kappa).
    """
    st = np.asarray(states, dtype=float)[1:]
    ref = np.asarray(reference, dtype=float)
    e = st - ref
    e_th = normalize_angles(e[:, 2])
    taus = np.asarray(taus, dtype=float)
    return float(0.5 * (params.c_x * np.sum(e[:, 0] ** 2) + params.c_y * np.sum(e[:, 1] ** 2)
                        + params.c_theta * np.sum(e_th ** 2) + params.c_kappa * np.sum(e[:, 3] ** 2)
                        + params.c_tau * np.sum(taus ** 2)))


def _cost_and_grad(taus, state0, v, ref, params: MpcParams):
    m = params.substeps
    h, n = params.dt / m, len(taus)
    xs = np.empty((n * m + 1, 4))
    xs[0] = state0
    unclamped = np.ones(n * m, dtype=bool)
    for j in range(n * m):
        x, y, th, k = xs[j]
        kn = k + taus[j // m] * h
        unclamped[j] = -params.kappa_max < kn < params.kappa_max
        xs[j + 1] = (x + v * math.cos(th) * h, y + v * math.sin(th) * h, th + v * k * h,
                     min(max(kn, -params.kappa_max), params.kappa_max))
    e = xs[m::m] - ref
    e[:, 2] = normalize_angles(e[:, 2])
    w = np.array([params.c_x, params.c_y, params.c_theta, params.c_kappa])
    cost = 0.5 * float(np.sum(w * e * e)) + 0.5 * params.c_tau * float(np.sum(taus * taus))

    # adjoint sweep backwards through the sub-steps
    grad = params.c_tau * np.asarray(taus, dtype=float).copy()
    lam = np.zeros(4)
    for j in range(n * m - 1, -1, -1):
        if (j + 1) % m == 0:
            lam = lam + w * e[(j + 1) // m - 1]
        if unclamped[j]:
            grad[j // m] += lam[3] * h
        th = xs[j, 2]
        lam = np.array([
            lam[0],
            lam[1],
            lam[2] - lam[0] * v * math.sin(th) * h + lam[1] * v * math.cos(th) * h,
            lam[2] * v * h + (lam[3] if unclamped[j] else 0.0),
        ])
    return cost, grad, xs[::m]


def reference_window(path: DensePath, s0: float, v: float, params: MpcParams) -> np.ndarray:
    n = params.steps
    s_ref = s0 + v * params.dt * np.arange(1, n + 1)
    if s_ref[-1] > path.length + 1e-9:
        raise PathTooShort(f"path ends {path.length - s0:.2f} m ahead, need {s_ref[-1] - s0:.2f} m")
    x, y, th, k = path.interpolate(s_ref)
    return np.column_stack([x, y, th, k])


def mpc_solve(ego: VehicleState, path: DensePath, v: float, params: MpcParams = MpcParams(),
              warm_start=None, s0: float | None = None) -> MpcSolution:
    """Optimize the steering-rate sequence; returns the best of optimum, warm start and zeros."""
    n = params.steps
    if s0 is None:
        s0, _ = project_to_path((ego.pose.x, ego.pose.y), path)
    ref = reference_window(path, s0, v, params)
    state0 = np.array([ego.pose.x, ego.pose.y, ego.pose.theta, ego.kappa])
    # keep the reference heading on the same branch as the state for the residual
    ref[:, 2] = state0[2] + normalize_angles(ref[:, 2] - state0[2])

    def fun(t):
        c, g, _ = _cost_and_grad(t, state0, v, ref, params)
        return c, g

    bounds = [(-params.tau_max, params.tau_max)] * n
    starts = [np.zeros(n)]
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        # shift by one step, repeat the last entry
        shifted = np.append(ws[1:], ws[-1:])[:n] if len(ws) else np.zeros(n)
        if len(shifted) < n:
            shifted = np.append(shifted, np.zeros(n - len(shifted)))
        starts.append(np.clip(shifted, -params.tau_max, params.tau_max))
    candidates = [(fun(t0)[0], t0) for t0 in starts]
    x0 = min(candidates, key=lambda c: c[0])[1]
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": params.max_iter, "ftol": params.tol, "gtol": 1e-10})
    candidates.append((float(res.fun), np.asarray(res.x)))
    cost, taus = min(candidates, key=lambda c: c[0])
    if not math.isfinite(cost):
        raise FloatingPointError("non-finite MPC cost")
    states = rollout(state0, v, taus, params)
    return MpcSolution(np.array(taus, dtype=float), states, float(cost))


def steering_from_solution(sol: MpcSolution, ego: VehicleState, dt: float = 1.0) -> float:
    """Front-wheel angle after applying the first steering rate for ``dt`` seconds."""
    if len(sol.tau_sequence) == 0:
        raise ValueError("empty steering sequence")
    phi = ego.steer
    phi += float(sol.tau_sequence[0]) * ego.wheelbase * math.cos(phi) ** 2 * dt
    return min(max(phi, -ego.max_steer), ego.max_steer)


def pi_speed_control(v_target: float, v: float, ctrl: PiParams, integral: float,
                     dt: float) -> tuple[float, float]:
    """Returns (command in [-1, 1], new integral). Positive is throttle, negative brake."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = v_target - v
    raw = ctrl.kp * e + ctrl.ki * integral
    # conditional integration: freeze the integral while saturated in the direction of the error
    if not ((raw >= 1.0 and e > 0) or (raw <= -1.0 and e < 0)):
        integral = min(max(integral + e * dt, -ctrl.integral_limit), ctrl.integral_limit)
    u = ctrl.kp * e + ctrl.ki * integral
    return min(max(u, -1.0), 1.0), integral


@dataclass
class LateralController:
    """Keeps the warm start between receding-horizon solves."""

    params: MpcParams = MpcParams()
    last: np.ndarray | None = None
    solves: int = 0

    def steer(self, ego: VehicleState, path: DensePath, v: float, dt: float) -> float:
        s0, _ = project_to_path((ego.pose.x, ego.pose.y), path)
        # near the route end the horizon is shortened by slowing the assumed speed
        v_eff = min(v, max(0.0, (path.length - s0) / self.params.horizon))
        sol = mpc_solve(ego, path, v_eff, self.params, self.last, s0=s0)
        self.last = sol.tau_sequence
        self.solves += 1
        return steering_from_solution(sol, ego, dt)
