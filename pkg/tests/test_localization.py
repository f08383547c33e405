import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avstack.common import utm_to_geo
from avstack.localization import (ControlInput, DegenerateBaseline, EkfParams, EkfState, Localizer,
                                  Observation, ekf_predict, ekf_update, heading_from_pair, localize)
from avstack.sim import SensorRig, SimWorld, scenario_from_dict

P = EkfParams()


@pytest.mark.parametrize("back, front, expected", [((0, 0), (1, 0), 0.0), ((0, 0), (0, 2), math.pi / 2),
                                                   ((1, 1), (0, 0), -3 * math.pi / 4)])
def test_heading_from_pair(back, front, expected):
    assert heading_from_pair(back, front) == pytest.approx(expected)


def test_heading_from_coincident_pair_raises():
    with pytest.raises(DegenerateBaseline):
        heading_from_pair((2.0, 3.0), (2.0, 3.0 + 1e-9))


def test_predict_stationary_adds_exactly_q():
    s = EkfState([1.0, 2.0, 0.3], np.diag([0.5, 0.4, 0.1]))
    out = ekf_predict(s, ControlInput(0.0, 0.2, 0.5), P)
    np.testing.assert_array_equal(out.mean, s.mean)
    np.testing.assert_allclose(out.cov, s.cov + P.Q(0.5), atol=1e-15)


def test_predict_straight():
    out = ekf_predict(EkfState([0, 0, 0], np.eye(3)), ControlInput(1.0, 0.0, 1.0), P)
    np.testing.assert_allclose(out.mean, [1.0, 0.0, 0.0], atol=1e-15)


def test_predict_heading_first():
    # theta advances to 0.1 before the position step uses it
    out = ekf_predict(EkfState([0, 0, 0], np.eye(3)), ControlInput(1.0, 0.1, 1.0), P)
    np.testing.assert_allclose(out.mean, [math.cos(0.1), math.sin(0.1), 0.1], atol=1e-15)


def test_update_with_mean_observation_shrinks_covariance():
    s = EkfState([3.0, -1.0, 0.5], np.eye(3))
    out, ok = ekf_update(s, Observation(3.0, -1.0, 0.5), P)
    assert ok
    np.testing.assert_allclose(out.mean, s.mean, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(s.cov - out.cov) > 0)


def test_update_tiny_r_pulls_mean_to_observation():
    p = EkfParams(r_diag=(1e-12, 1e-12, 1e-12))
    s = EkfState([0.0, 0.0, 0.0], np.eye(3))
    out, ok = ekf_update(s, Observation(0.7, -0.4, 0.2), p)
    assert ok
    np.testing.assert_allclose(out.mean, [0.7, -0.4, 0.2], atol=1e-9)


def test_far_observation_is_gated():
    s = EkfState([0.0, 0.0, 0.0], np.eye(3))
    out, ok = ekf_update(s, Observation(50.0, 0.0, 0.0), P)
    assert not ok and out is s
    # squared Mahalanobis distance 2500/1.25 is far above the gate
    assert 50.0**2 / (1.0 + P.r_diag[0]) > P.gate


def test_heading_residual_on_circle():
    s = EkfState([0.0, 0.0, 3.0], np.eye(3))
    out, _ = ekf_update(s, Observation(0.0, 0.0, 3.0 + 2 * math.pi), P)
    assert out.mean[2] == pytest.approx(3.0, abs=1e-12)
    # across the branch cut the correction goes the short way
    out, _ = ekf_update(EkfState([0, 0, math.pi - 0.01], np.eye(3)), Observation(0, 0, -math.pi + 0.01), P)
    assert abs(out.mean[2]) > 3.1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_covariance_stays_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    s = EkfState([0, 0, 0], np.eye(3) * rng.uniform(1e-6, 10))
    for _ in range(200):
        s = ekf_predict(s, ControlInput(rng.uniform(0, 20), rng.uniform(-0.3, 0.3), rng.uniform(1e-3, 1.0)), P)
        if rng.random() < 0.7:
            s, _ = ekf_update(s, Observation(*(s.mean + rng.normal(0, [1, 1, 0.3]))), P)
        assert np.max(np.abs(s.cov - s.cov.T)) <= 1e-9
        assert np.linalg.eigvalsh(s.cov).min() >= -1e-9


def _geo(x, y, zone=31):
    return utm_to_geo(500000.0 + x, 5_000_000.0 + y, zone, False)


def test_localize_pair_east_gives_zero_heading():
    origin = (500000.0, 5_000_000.0)
    step = localize(_geo(0, 0), _geo(1, 0), None, ControlInput(0, 0, 0.1), None, P, 31, origin)
    assert step.observed and step.state.mean[2] == pytest.approx(0.0, abs=1e-7)
    assert step.state.mean[:2] == pytest.approx([0.0, 0.0], abs=1e-6)
    np.testing.assert_allclose(step.state.cov, P.R * P.init_inflation)


def test_localize_stationary_sequential_fixes_predict_only():
    origin = (500000.0, 5_000_000.0)
    s0 = EkfState([0, 0, 0.4], np.eye(3))
    p = _geo(0, 0)
    step = localize(p, None, p, ControlInput(0.0, 0.0, 0.1), s0, P, 31, origin)
    assert not step.observed and not step.accepted
    np.testing.assert_array_equal(step.state.mean, s0.mean)


def test_localize_falls_back_to_previous_fix():
    origin = (500000.0, 5_000_000.0)
    s0 = EkfState([0, 0, 0.0], np.eye(3))
    step = localize(_geo(0, 1), None, _geo(0, 0), ControlInput(0.0, 0.0, 0.1), s0, P, 31, origin)
    assert step.observed and step.accepted and step.state.mean[2] > 0.5


def test_zero_noise_tracks_ground_truth():
    cfg = scenario_from_dict({"name": "z", "ego": {"pose": [3, -2, 0.4], "v": 6.0},
                              "route": {"waypoints": [[0, 0], [100, 0]]}, "sensors": {"gps_sigma": 0.0}})
    w = SimWorld(cfg)
    rig = SensorRig(w)
    loc = Localizer(EkfParams(q_diag=(0, 0, 0), r_diag=(0, 0, 0), init_inflation=0.0), zone=rig.frame.zone,
                    origin=(rig.frame.easting, rig.frame.northing))
    for k in range(100):
        snap = rig.snapshot(w)
        if k:
            loc.predict(ControlInput(snap.can.v, 0.0, cfg.dt))
        if snap.gps is not None:
            loc.correct(snap.gps.back, snap.gps.front)
        x, y, th = loc.state.mean
        assert math.hypot(x - w.ego.pose.x, y - w.ego.pose.y) < 1e-6
        assert th == pytest.approx(w.ego.pose.theta, abs=1e-6)
        w.step(0.0, 0.0)


def test_localizer_counts_rejections():
    loc = Localizer(P, zone=31, origin=(500000.0, 5_000_000.0))
    assert loc.correct(_geo(0, 0), _geo(2.85, 0))
    assert not loc.correct(_geo(200, 0), _geo(202.85, 0))
    assert loc.rejected == 1
