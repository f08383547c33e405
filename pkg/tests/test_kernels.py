import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import avstack.kernels as K
from avstack.decision import MdpParams, Phi

py = K.python_backend
cy = K.compiled_backend
needs_compiled = pytest.mark.skipif(cy is None, reason="compiled extension not built")


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 400))
def test_height_grid_backends_agree(seed, n):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform([-12, -12, -0.5], [12, 12, 3], size=(n, 3))
    a = py.bin_height_grid(xyz, -10.0, -10.0, 0.5, 40, 40)
    b = cy.bin_height_grid(xyz, -10.0, -10.0, 0.5, 40, 40)
    for x, y in zip(a[:3], b[:3]):
        np.testing.assert_array_equal(x, y)
    assert a[3] == b[3]


@needs_compiled
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_virtual_scan_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(12, 9, 3))
    pts[:6, :, 2] = 0.0  # flat patch so that some pixels are dropped
    valid = (rng.random((12, 9)) > 0.2).astype(np.uint8)
    a = py.virtual_scan_keep(pts, valid, 0.985, 0.5**0.5)
    b = cy.virtual_scan_keep(pts, valid, 0.985, 0.5**0.5)
    np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_raycast_backends_agree(seed, nbox):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(300, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    boxes = np.column_stack([rng.uniform(-20, 20, (nbox, 2)), rng.uniform(-3, 3, nbox),
                             rng.uniform(0.3, 3, (nbox, 2)), np.zeros(nbox), rng.uniform(0.5, 3, nbox)])
    a = py.raycast((0.0, 0.0, 1.8), dirs, boxes, True, 50.0)
    b = np.asarray(cy.raycast((0.0, 0.0, 1.8), dirs, boxes, True, 50.0))
    np.testing.assert_array_equal(np.isinf(a), np.isinf(b))
    np.testing.assert_allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-12, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("state", [(5.0, 12.0, Phi.RED, np.inf), (2.0, np.inf, Phi.GREEN, np.inf),
                                   (8.0, 30.0, Phi.YELLOW, 20.0), (0.0, 3.0, Phi.RED, 6.0)])
def test_uct_backends_agree(state):
    v, dphi, phi, dv = state
    params = MdpParams().kernel_tuple()
    a = py.uct_plan(v, dphi, int(phi), dv, params, 500, MdpParams().depth, 11)
    b = cy.uct_plan(v, dphi, int(phi), dv, params, 500, MdpParams().depth, 11)
    assert a[0] == b[0] and tuple(a[2]) == tuple(b[2])
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9)


def test_splitmix_reference_values():
    # reference outputs of the published SplitMix64 generator for seed 0
    g = K.SplitMix64(0)
    assert [g.next_u64() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    u = K.SplitMix64(5)
    assert all(0.0 <= u.random() < 1.0 for _ in range(1000))


def test_pure_python_switch():
    env = {**os.environ, "AVSTACK_PURE_PYTHON": "1"}
    r = subprocess.run([sys.executable, "-c", "import avstack; print(avstack.BACKEND)"],
                       capture_output=True, text=True, env=env, check=True)
    assert r.stdout.strip() == "python"


@needs_compiled
def test_compiled_backend_active_by_default():
    assert K.BACKEND == "cython"
