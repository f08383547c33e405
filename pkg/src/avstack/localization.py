"""GPS + CAN pose estimation: heading from receiver pairs and an EKF on (x, y, theta)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .common import GeoPoint, geo_to_utm, normalize_angle

MIN_BASELINE = 1e-6
GATE_CHI2_3DOF = 13.8


class DegenerateBaseline(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    x_o: float
    y_o: float
    theta_o: float

    def __post_init__(self):
        object.__setattr__(self, "theta_o", normalize_angle(self.theta_o))


@dataclass(frozen=True)
class ControlInput:
    v: float
    kappa: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(3)
        mean[2] = normalize_angle(mean[2])
        cov = np.array(self.cov, dtype=float).reshape(3, 3)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class EkfParams:
    q_diag: tuple = (0.1**2, 0.1**2, 0.01**2)  # per second
    r_diag: tuple = (0.5**2, 0.5**2, 0.05**2)
    gate: float = GATE_CHI2_3DOF
    init_inflation: float = 10.0

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)

    def Q(self, dt: float) -> np.ndarray:
        return np.diag(self.q_diag) * dt


def heading_from_pair(p_back, p_front) -> float:
    dx = p_front[0] - p_back[0]
    dy = p_front[1] - p_back[1]
    if math.hypot(dx, dy) <= MIN_BASELINE:
        raise DegenerateBaseline("receiver positions coincide")
    return normalize_angle(math.atan2(dy, dx))


def ekf_predict(s: EkfState, u: ControlInput, params: EkfParams = EkfParams()) -> EkfState:
    # heading first, then position with the new heading
    x, y, th = s.mean
    th_new = th + u.kappa * u.v * u.dt
    c, sn = math.cos(th_new), math.sin(th_new)
    mean = np.array([x + u.v * c * u.dt, y + u.v * sn * u.dt, th_new])
    J = np.array([
        [1.0, 0.0, -u.v * sn * u.dt],
        [0.0, 1.0, u.v * c * u.dt],
        [0.0, 0.0, 1.0],
    ])
    return EkfState(mean, J @ s.cov @ J.T + params.Q(u.dt))


def ekf_update(s: EkfState, z: Observation, params: EkfParams = EkfParams()) -> tuple[EkfState, bool]:
    """Correct with a direct (x, y, theta) observation.

    Returns ``(state, accepted)``. Observations whose squared Mahalanobis
    distance exceeds ``params.gate`` are rejected and the prior comes back
    untouched.
    """
    innov = np.array([z.x_o - s.mean[0], z.y_o - s.mean[1], normalize_angle(z.theta_o - s.mean[2])])
    S = s.cov + params.R
    S_inv = np.linalg.pinv(S, hermitian=True)
    if float(innov @ S_inv @ innov) > params.gate:
        return s, False
    K = s.cov @ S_inv
    I_K = np.eye(3) - K
    # Joseph form keeps the covariance symmetric PSD
    cov = I_K @ s.cov @ I_K.T + K @ params.R @ K.T
    return EkfState(s.mean + K @ innov, cov), True


def seed_state(z: Observation, params: EkfParams = EkfParams()) -> EkfState:
    return EkfState([z.x_o, z.y_o, z.theta_o], params.R * params.init_inflation)


@dataclass
class LocalizationStep:
    state: EkfState | None
    accepted: bool
    observed: bool


def observation_from_gps(gps_back: GeoPoint, gps_front: GeoPoint | None, prev: GeoPoint | None,
                         zone: int, origin: tuple[float, float] = (0.0, 0.0)) -> Observation | None:
    """Build an observation in the local metric frame; None when no heading source works."""

    def local(p):
        e, n, _, _ = geo_to_utm(p, zone=zone)
        return e - origin[0], n - origin[1]

    back = local(gps_back)
    for other, forward in ((gps_front, True), (prev, False)):
        if other is None:
            continue
        o = local(other)
        try:
            theta = heading_from_pair(back, o) if forward else heading_from_pair(o, back)
        except DegenerateBaseline:
            continue
        return Observation(back[0], back[1], theta)
    return None


def localize(gps_back: GeoPoint, gps_front: GeoPoint | None, prev: GeoPoint | None,
             can: ControlInput, state: EkfState | None, params: EkfParams = EkfParams(),
             zone: int = 31, origin: tuple[float, float] = (0.0, 0.0)) -> LocalizationStep:
    """One localization cycle.

    Heading comes from the front/back receiver pair when available, else from
    the previous back fix. With no usable heading source the step is
    predict-only. The first usable observation seeds the filter.
    """
    z = observation_from_gps(gps_back, gps_front, prev, zone, origin)
    if state is None:
        if z is None:
            return LocalizationStep(None, False, False)
        return LocalizationStep(seed_state(z, params), True, True)
    predicted = ekf_predict(state, can, params)
    if z is None:
        return LocalizationStep(predicted, False, False)
    updated, ok = ekf_update(predicted, z, params)
    return LocalizationStep(updated, ok, True)


@dataclass
class Localizer:
    """Stateful wrapper owning one vehicle's filter track."""

    params: EkfParams = field(default_factory=EkfParams)
    zone: int = 31
    origin: tuple = (0.0, 0.0)
    state: EkfState | None = None
    prev_back: GeoPoint | None = None
    rejected: int = 0

    def predict(self, can: ControlInput) -> None:
        if self.state is not None:
            self.state = ekf_predict(self.state, can, self.params)

    def correct(self, gps_back: GeoPoint, gps_front: GeoPoint | None) -> bool:
        z = observation_from_gps(gps_back, gps_front, self.prev_back, self.zone, self.origin)
        self.prev_back = gps_back
        if z is None:
            return False
        if self.state is None:
            self.state = seed_state(z, self.params)
            return True
        self.state, ok = ekf_update(self.state, z, self.params)
        self.rejected += not ok
        return ok
