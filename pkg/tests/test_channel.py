import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from mcnoma.channel import (
    ChannelDomainError,
    PhysicalParams,
    RedrawPolicy,
    SamplingModel,
    UCAWarning,
    draw_poisson,
    draw_sampling_time,
    hit_probability,
    hit_probability_array,
    mean_signal,
    peak_time,
)

P = PhysicalParams(distances=(10e-6,))
T_PEAK = 1 / 60


def test_hit_probability_matches_high_precision_oracle():
    for t in (1e-3, T_PEAK, 0.1, 0.9, 3.0):
        ref = float(oracles.hit_probability(t, 10e-6))
        assert hit_probability(t, 10e-6, P) == pytest.approx(ref, rel=1e-12)


def test_peak_value_default_link():
    p = hit_probability(T_PEAK, 10e-6, P)
    assert p == pytest.approx(3.0836e-4, rel=1e-3)
    assert mean_signal(1e6, T_PEAK, 10e-6, P) == pytest.approx(308.36, abs=0.01)


def test_limits_vanish():
    assert hit_probability(1e-9, 10e-6, P) < 1e-300
    assert hit_probability(1e9, 10e-6, P) < 1e-18


@pytest.mark.parametrize("t,d", [(0.0, 1e-5), (-1.0, 1e-5), (0.1, 0.0), (0.1, -1e-6)])
def test_domain_errors(t, d):
    with pytest.raises(ChannelDomainError):
        hit_probability(t, d, P)


def test_vectorised_matches_scalar_and_zero_before_emission():
    t = np.array([-0.5, 0.0, 0.01, 0.2])
    out = hit_probability_array(t, 10e-6, 1e-6, 1e-9)
    assert out[0] == 0 and out[1] == 0
    assert out[2] == pytest.approx(hit_probability(0.01, 10e-6, P), rel=1e-14)
    assert out[3] == pytest.approx(hit_probability(0.2, 10e-6, P), rel=1e-14)


def test_peak_time_examples():
    assert peak_time(10e-6, 1e-9) == pytest.approx(T_PEAK)
    assert peak_time(10e-6, 1e-9, 0.4) == pytest.approx(T_PEAK + 0.4)
    assert peak_time(20e-6, 1e-9) == pytest.approx(4 * T_PEAK)
    with pytest.raises(ChannelDomainError):
        peak_time(0.0, 1e-9)


@given(d=st.floats(2e-6, 50e-6), D=st.floats(1e-10, 1e-8))
def test_unimodal_with_peak_at_d2_over_6D(d, D):
    params = PhysicalParams(distances=(d,), rx_radius=0.1e-6, diffusion=D)
    tp = peak_time(d, D)
    p = hit_probability(tp, d, params)
    assert hit_probability(0.5 * tp, d, params) < p
    assert hit_probability(2.0 * tp, d, params) < p
    assert hit_probability(tp * (1 + 1e-4), d, params) <= p
    assert hit_probability(tp * (1 - 1e-4), d, params) <= p


@given(t=st.floats(1e-3, 5.0), d1=st.floats(2e-6, 40e-6), dd=st.floats(1e-7, 20e-6))
def test_decreasing_in_distance(t, d1, dd):
    params = PhysicalParams(distances=(d1,), rx_radius=0.1e-6)
    assert hit_probability(t, d1 + dd, params) <= hit_probability(t, d1, params)


@given(n=st.one_of(st.just(0.0), st.floats(1e-3, 1e7)), t=st.floats(1e-3, 2.0))
def test_mean_signal_linear(n, t):
    base = mean_signal(n, t, 10e-6, P)
    assert mean_signal(2 * n, t, 10e-6, P) == pytest.approx(2 * base, rel=1e-12, abs=0)
    assert mean_signal(0.0, t, 10e-6, P) == 0.0


def test_uca_warning_not_error():
    with pytest.warns(UCAWarning):
        PhysicalParams(distances=(5e-6,), rx_radius=1e-6)


def test_sampling_time_degenerate_and_bounds():
    rng = np.random.default_rng(1)
    assert draw_sampling_time(0.3, 0.0, rng) == 0.3
    draws = draw_sampling_time(0.3, 0.1, rng, size=100_000)
    assert draws.min() >= 0.25 and draws.max() <= 0.35
    tol = 3 * 0.1 / math.sqrt(12 * 100_000)
    assert abs(draws.mean() - 0.3) < tol
    with pytest.raises(ChannelDomainError):
        SamplingModel(jitter=-0.1)
    assert SamplingModel(0.1, "per_iteration").policy is RedrawPolicy.PER_ITERATION


def test_poisson_draw_moments():
    rng = np.random.default_rng(2)
    x = draw_poisson(308.3, rng, size=1_000_000)
    assert abs(x.mean() - 308.3) < 1
    assert x.var() == pytest.approx(308.3, rel=0.02)
    assert np.all(draw_poisson(0.0, rng, size=1000) == 0)
    assert np.mean(draw_poisson(1e-6, rng, size=100_000) == 0) > 0.9999
    with pytest.raises(ChannelDomainError):
        draw_poisson(-1.0, rng)


@pytest.mark.parametrize("lam", [0.5, 30.0, 308.3, 1e4, 1e6])
def test_poisson_draw_ks(lam):
    rng = np.random.default_rng(int(lam * 10) + 3)
    x = np.sort(draw_poisson(lam, rng, size=100_000))
    values, counts = np.unique(x, return_counts=True)
    ecdf = np.cumsum(counts) / len(x)
    cdf = stats.poisson.cdf(values, lam)
    ks = np.max(np.abs(ecdf - cdf))
    assert ks < 1.63 / math.sqrt(len(x))  # 1% critical value
