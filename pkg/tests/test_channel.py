import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_channel
from oracles import stationary_by_eig
from sdmc.channel import (
    FadingModelError,
    FadingSpec,
    JointConditional,
    SdMcChannel,
    StationaryError,
    channel_from_fading,
    fading_stats,
    induced_rate_chain,
    stationary_distribution,
    validate_channel,
)


def test_table_two_channel_is_valid(preset):
    assert validate_channel(preset.channel).ok
    assert preset.channel.shape == (2, 2, 2, 2)


def test_table_two_entries(preset):
    ch = preset.channel
    assert np.allclose(ch.column(0, 0, 0), [0.8, 0.2])
    assert np.allclose(ch.column(0, 1, 1), [0.1, 0.9])
    assert np.allclose(ch.column(1, 1, 0), [0.5, 0.5])


def test_defective_slice_reported(preset):
    P = np.array(preset.channel.transitions)
    P[:, 1, 0, 1] = [0.5, 0.4]
    rep = validate_channel(SdMcChannel([0, 2], P))
    assert len(rep.violations) == 1
    assert rep.violations[0].kind == "stochastic"
    assert rep.violations[0].index == (1, 0, 1)


def test_descending_rates_reported():
    rep = validate_channel(SdMcChannel([2, 0], np.eye(2)))
    assert [v.kind for v in rep.violations] == ["ordering"]


def test_fading_stationary_probabilities():
    pi, N = fading_stats([0.0, 1.0, math.inf], 1.0, 10.0)
    assert pi == pytest.approx([1 - math.exp(-1), math.exp(-1)], abs=1e-15)
    assert N[1] == pytest.approx(math.sqrt(2 * math.pi) * 10 * math.exp(-1))
    assert N[2] == 0.0


def _spec(**kw):
    base = dict(power_levels=[1.0], shadowing=[1.0], noise_density=1.0, bandwidth=1.0,
                snr_thresholds=[0.0, 1.0, math.inf], doppler=10.0, packet_period=0.01)
    base.update(kw)
    return FadingSpec(**base)


def test_fading_transition_formula():
    ch = channel_from_fading(_spec())
    N2 = math.sqrt(2 * math.pi) * 10 * math.exp(-1)
    pi1, pi2 = 1 - math.exp(-1), math.exp(-1)
    assert ch.transitions[1, 0, 0, 0] == pytest.approx(N2 * 0.01 / pi1, rel=1e-13)
    assert ch.transitions[0, 1, 0, 0] == pytest.approx(N2 * 0.01 / pi2, rel=1e-13)
    assert validate_channel(ch).ok


def test_fading_power_scales_mean_snr():
    a = _spec(power_levels=[1.0, 2.0])
    g = a.mean_snr()
    assert g[0, 1] == pytest.approx(2 * g[0, 0])


def test_fading_tridiagonal():
    ch = channel_from_fading(_spec(snr_thresholds=[0.0, 0.5, 1.0, 2.0, math.inf], packet_period=0.001))
    P = ch.transitions[:, :, 0, 0]
    assert np.all(np.triu(P, 2) == 0) and np.all(np.tril(P, -2) == 0)


def test_fading_rejects_long_packet_period():
    with pytest.raises(FadingModelError, match="packet period"):
        channel_from_fading(_spec(packet_period=1.0))


def test_induced_chain_degenerate():
    P = np.array([[0.3, 0.6], [0.7, 0.4]])
    ch = SdMcChannel.from_rate_matrix([0, 1], P)
    assert np.allclose(induced_rate_chain(ch, JointConditional.uniform(2, 1, 1)), P)


def test_induced_chain_uniform_average(preset):
    ch = preset.channel
    Pbar = induced_rate_chain(ch, JointConditional.uniform(2, 2, 2))
    assert np.allclose(Pbar, ch.transitions.mean(axis=(2, 3)))


def test_induced_chain_reproduces_reference_matrix(preset):
    cond = np.zeros((2, 2, 2))
    cond[:, 0, 1] = 0.2
    cond[:, 1, 1] = 0.8
    Pbar = induced_rate_chain(preset.channel, JointConditional(cond))
    assert np.allclose(Pbar, [[0.2, 0.2], [0.8, 0.8]], atol=1e-12)


def test_induced_chain_dimension_mismatch(preset):
    with pytest.raises(ValueError):
        induced_rate_chain(preset.channel, JointConditional.uniform(2, 1, 2))


def test_stationary_examples():
    assert stationary_distribution([[1.0]]) == pytest.approx([1.0])
    pi = stationary_distribution([[0.2, 0.2], [0.8, 0.8]])
    assert pi == pytest.approx([0.2, 0.8], abs=1e-12)
    with pytest.raises(StationaryError):
        stationary_distribution(np.eye(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(0, 1))
def test_induced_chain_affine_and_stochastic(seed, alpha):
    rng = np.random.default_rng(seed)
    ch = random_channel(rng, Mr=3, Ms=2, Mp=2)
    c1 = rng.dirichlet(np.ones(4), size=3).reshape(3, 2, 2)
    c2 = rng.dirichlet(np.ones(4), size=3).reshape(3, 2, 2)
    mix = induced_rate_chain(ch, JointConditional(alpha * c1 + (1 - alpha) * c2))
    lin = alpha * induced_rate_chain(ch, JointConditional(c1)) + (1 - alpha) * induced_rate_chain(ch, JointConditional(c2))
    assert np.allclose(mix, lin, atol=1e-12)
    assert np.allclose(mix.sum(axis=0), 1.0, atol=1e-9)
    pi = stationary_distribution(mix)
    assert np.max(np.abs(mix @ pi - pi)) <= 1e-10
    assert np.allclose(pi, stationary_by_eig(mix), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(gbar=st.floats(0.5, 20), fd=st.floats(0.1, 5), tp=st.floats(1e-4, 1e-3))
def test_fading_output_always_valid(gbar, fd, tp):
    spec = _spec(power_levels=[gbar], doppler=fd, packet_period=tp, snr_thresholds=[0.0, 0.5, 2.0, math.inf])
    try:
        ch = channel_from_fading(spec)
    except FadingModelError:
        return
    assert validate_channel(ch).ok


def test_channel_is_immutable(preset):
    with pytest.raises(ValueError):
        preset.channel.transitions[0, 0, 0, 0] = 1.0
