import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mati_textbook
from sdmc.stability import (
    StabilityParams,
    lambda_bar_threshold_inf,
    lambda_bar_threshold_one,
    mati_bound,
    mati_report,
    mati_via_phi_ode,
)

PBAR = [[0.2, 0.2], [0.8, 0.8]]


def test_threshold_inf_reference():
    assert lambda_bar_threshold_inf(StabilityParams(1, 1, [1, 0.5]), PBAR) == pytest.approx(0.63246, abs=1e-4)


def test_threshold_examples():
    assert lambda_bar_threshold_inf(StabilityParams(1, 1, [1]), [[1.0]]) == 1.0
    assert lambda_bar_threshold_inf(StabilityParams(1, 1, [1, 1]), [[0.5, 0.3], [0.5, 0.7]]) == pytest.approx(
        math.sqrt(1.2))
    assert lambda_bar_threshold_one(StabilityParams(1, 1, [1, 0.5]), PBAR) == pytest.approx(math.sqrt(0.8))
    assert lambda_bar_threshold_one(StabilityParams(1, 1, [1, 1]), PBAR) == pytest.approx(math.sqrt(2))


def test_threshold_dimension_mismatch():
    with pytest.raises(ValueError):
        lambda_bar_threshold_inf(StabilityParams(1, 1, [1, 0.5, 0.2]), PBAR)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 5))
def test_one_norm_dominates(seed, n):
    rng = np.random.default_rng(seed)
    P = rng.random((n, n))
    P /= P.sum(axis=0)
    params = StabilityParams(1, 1, rng.uniform(0.1, 2, n))
    assert lambda_bar_threshold_one(params, P) >= lambda_bar_threshold_inf(params, P) - 1e-12


def test_mati_preset_parameters(preset):
    val = mati_bound(preset.stability, 0.64)
    assert val == pytest.approx(0.0098508, rel=1e-4)
    assert abs(val - 0.0104) / 0.0104 < 0.10


def test_mati_middle_branch():
    assert mati_bound(StabilityParams(1, 1, [1]), 0.5) == pytest.approx(1 / 3)
    assert mati_bound(StabilityParams(1, 1, [1]), 0.99) == pytest.approx(0.01 / 1.99)


def test_mati_domain_errors():
    p = StabilityParams(1, 2, [1])
    for lb in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            mati_bound(p, lb)


def test_mati_zero_L():
    # zeta-only ODE: phi' = -zeta (phi^2 + 1), hitting time (atan(1/lb) - atan(lb)) / zeta
    lb, z = 0.4, 3.0
    assert mati_bound(StabilityParams(0, z, [1]), lb) == pytest.approx((math.atan(1 / lb) - math.atan(lb)) / z)


def test_mati_vanishes_at_boundary():
    p = StabilityParams(2, 5, [1])
    assert mati_bound(p, 1 - 1e-9) < 1e-8


@settings(max_examples=60, deadline=None)
@given(L=st.floats(0.1, 50), z=st.floats(0.1, 50), lb=st.floats(0.05, 0.95))
def test_mati_matches_textbook_form(L, z, lb):
    assert mati_bound(StabilityParams(L, z, [1]), lb) == pytest.approx(mati_textbook(L, z, lb), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(L=st.floats(0.1, 50), z=st.floats(0.1, 50), a=st.floats(0.05, 0.94), d=st.floats(0.001, 0.05))
def test_mati_decreasing(L, z, a, d):
    p = StabilityParams(L, z, [1])
    assert mati_bound(p, a) > mati_bound(p, min(a + d, 0.95))


def test_branch_continuity():
    base = mati_bound(StabilityParams(5, 5, [1]), 0.6)
    for z in (5 * (1 + 1e-9), 5 * (1 - 1e-9)):
        assert mati_bound(StabilityParams(5, z, [1]), 0.6) == pytest.approx(base, rel=1e-6)


def test_ode_oracle_fine_step(preset):
    ref = mati_bound(preset.stability, 0.64)
    assert mati_via_phi_ode(preset.stability, 0.64, 1e-7) == pytest.approx(ref, rel=1e-6)


def test_ode_oracle_random_sweep():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        p = StabilityParams(rng.uniform(0.1, 50), rng.uniform(0.1, 50), [1])
        lb = rng.uniform(0.05, 0.95)
        a, b = mati_bound(p, lb), mati_via_phi_ode(p, lb)
        worst = max(worst, abs(a - b) / a)
    assert worst < 1e-5


def test_ode_oracle_step_cap():
    with pytest.raises(RuntimeError):
        mati_via_phi_ode(StabilityParams(1, 1, [1]), 0.5, step=1e-6, max_steps=10)


def test_report_fields(preset):
    rep = mati_report(preset.stability, 0.64, reference=0.0104)
    assert rep["relative_discrepancy"] < 1e-5
    assert abs(rep["relative_to_reference"]) < 0.1


def test_params_validation():
    with pytest.raises(ValueError):
        StabilityParams(-1, 1, [1])
    with pytest.raises(ValueError):
        StabilityParams(1, 0, [1])
    with pytest.raises(ValueError):
        StabilityParams(1, 1, [0.5, 0])
    assert "not asserted" in StabilityParams(1, 1, [1]).header()
