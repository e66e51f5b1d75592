import os
import subprocess
import sys

import numpy as np
import pytest

from sdmc import _core
from sdmc._core import _pycore
from sdmc.simulator import _Kernel, _run_inputs

ccore = pytest.importorskip("sdmc._core._ccore")


def _inputs(preset, n_steps):
    kernel = _Kernel(preset.plant, preset.channel, preset.mdp, preset.policies, preset.costs, 0.01, 0.0001)
    x0, U = _run_inputs(preset.plant, [3, 4, 5, 6], n_steps, 0.01)
    n = len(x0)
    args = (kernel.Phi, kernel.xi_gain, x0, np.zeros_like(x0), np.full(n, 2.0),
            np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), kernel.bits,
            kernel.cdf_P, kernel.cdf_q, kernel.cdf_ctrl, kernel.cdf_pow, kernel.cost, U)
    return kernel, args


@pytest.fixture(scope="module")
def inputs(preset):
    return _inputs(preset, 600)


def test_default_backend_is_compiled():
    assert _core.BACKEND == "cython"


def test_simulate_batch_identical_early(preset):
    # while the box stays above double-precision resolution of the state
    _, args = _inputs(preset, 40)
    a = ccore.simulate_batch(*args, 1e6, 1e-300)
    b = _pycore.simulate_batch(*args, 1e6, 1e-300)
    assert a.keys() == b.keys()
    for key in a:
        u, v = np.asarray(a[key]), np.asarray(b[key])
        if u.dtype.kind == "f":
            # e = x - xh cancels, so compare against the size of each series
            scale = np.max(np.abs(u), axis=-1, keepdims=True) if u.ndim > 1 else np.max(np.abs(u))
            assert np.all(np.abs(u - v) <= 1e-12 * scale)
        else:
            assert np.array_equal(u, v)


def test_simulate_batch_identical(inputs):
    _, args = inputs
    a = ccore.simulate_batch(*args, 1e6, 1e-300)
    b = _pycore.simulate_batch(*args, 1e6, 1e-300)
    assert a.keys() == b.keys()
    for key in ("rate", "env", "power", "cum_cost", "blow_step"):
        assert np.allclose(np.asarray(a[key], dtype=float), np.asarray(b[key], dtype=float), rtol=1e-12, atol=0)
    # later escapes are triggered by roundoff, so only the continuous records are compared
    for key in ("x_norm", "e_norm", "xi"):
        u, v = np.asarray(a[key]), np.asarray(b[key])
        if u.dtype.kind == "f":
            # summation order differs between matmul implementations
            scale = np.nanmax(np.abs(u), axis=-1, keepdims=True) if u.ndim > 1 else np.nanmax(np.abs(u))
            assert np.allclose(u, v, rtol=1e-10, atol=0) or np.all(np.abs(u - v) <= 1e-10 * scale)
        else:
            assert np.array_equal(u, v)


def test_simulate_batch_blowup_identical(inputs):
    _, args = inputs
    # a tiny cap forces every run to blow up early
    a = ccore.simulate_batch(*args, 1e-3, 1e-300)
    b = _pycore.simulate_batch(*args, 1e-3, 1e-300)
    assert np.all(a["blow_step"] > 0)
    for key in a:
        assert np.allclose(np.asarray(a[key], dtype=float), np.asarray(b[key], dtype=float), rtol=1e-12,
                           equal_nan=True)

def test_simulate_chain_identical(inputs):
    kernel, _ = inputs
    U = np.random.default_rng(8).random((20_000, 4))
    a = ccore.simulate_chain(kernel.cdf_P, kernel.cdf_q, kernel.cdf_ctrl, kernel.cdf_pow, kernel.cost, 0, 0, U)
    b = _pycore.simulate_chain(kernel.cdf_P, kernel.cdf_q, kernel.cdf_ctrl, kernel.cdf_pow, kernel.cost, 0, 0, U)
    for u, v in zip(a, b):
        assert np.allclose(np.asarray(u), np.asarray(v), rtol=1e-12)


@pytest.mark.parametrize("lb", [0.3, 0.64, 0.9])
def test_phi_hitting_time_identical(lb):
    a = ccore.phi_hitting_time(17.887, 26.5415, lb, 1e-6, 10**8)
    b = _pycore.phi_hitting_time(17.887, 26.5415, lb, 1e-6, 10**8)
    assert a == pytest.approx(b, rel=1e-12)


def test_env_var_forces_fallback():
    env = dict(os.environ, SDMC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sdmc._core import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
