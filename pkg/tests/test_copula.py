from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rgbm.copula import (
    GumbelParam,
    copula_transition_matrix,
    fit_theta,
    gumbel_cdf,
    gumbel_sample,
    kendall_tau,
    positive_stable,
)
from rgbm.core import ModelParams, simulate
from rgbm.mobility import CrossSectionPair, transition_matrix


def test_cdf_hand_value():
    assert gumbel_cdf(0.5, 0.5, 2.0) == pytest.approx(math.exp(-math.sqrt(2) * math.log(2)), rel=1e-14)
    # 2**-sqrt(2) = 0.375214...
    assert gumbel_cdf(0.5, 0.5, 2.0) == pytest.approx(0.375214227, abs=1e-9)


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
@settings(max_examples=50, deadline=None)
def test_cdf_independence_at_one(u, v):
    assert gumbel_cdf(u, v, 1.0) == pytest.approx(u * v, rel=1e-12)


@given(st.floats(1e-6, 1.0), st.floats(1.0, 50.0))
@settings(max_examples=50, deadline=None)
def test_cdf_margins(u, theta):
    assert gumbel_cdf(u, 1.0, theta) == pytest.approx(u, rel=1e-12)
    assert gumbel_cdf(1.0, u, theta) == pytest.approx(u, rel=1e-12)


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(1.0, 20.0))
@settings(max_examples=50, deadline=None)
def test_cdf_between_frechet_bounds(u, v, theta):
    c = gumbel_cdf(u, v, theta)
    assert u * v * (1 - 1e-12) <= c <= min(u, v) * (1 + 1e-12)


def test_cdf_comonotone_and_domain():
    assert gumbel_cdf(0.3, 0.6, math.inf) == 0.3
    for bad in [(0.0, 0.5), (0.5, 1.2), (-0.1, 0.5)]:
        with pytest.raises(ValueError):
            gumbel_cdf(*bad, 2.0)
    with pytest.raises(ValueError):
        gumbel_cdf(0.5, 0.5, 0.9)
    with pytest.raises(ValueError):
        GumbelParam(0.5)


def test_param_properties():
    assert GumbelParam(2.0).kendall_tau == 0.5
    assert GumbelParam(math.inf).comonotone
    assert not GumbelParam(1.0).comonotone


# -- sampling ----------------------------------------------------------------


def test_positive_stable_half_is_levy():
    # index 1/2 with Laplace transform exp(-sqrt(s)) is Levy with scale 1/2
    logv = positive_stable(0.5, 100_000, np.random.default_rng(0))
    assert stats.kstest(np.exp(logv), stats.levy(scale=0.5).cdf).pvalue > 0.01


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.8])
def test_positive_stable_laplace_transform(alpha):
    v = np.exp(positive_stable(alpha, 200_000, np.random.default_rng(1)))
    for s in (0.3, 1.0, 3.0):
        w = np.exp(-s * v)
        se = w.std() / math.sqrt(w.size)
        assert abs(w.mean() - math.exp(-(s**alpha))) < 4 * se


def test_sample_independence_kendall():
    n = 5_000
    uv = gumbel_sample(n, 1.0, np.random.default_rng(2))
    se = math.sqrt(2 * (2 * n + 5) / (9 * n * (n - 1)))
    assert abs(kendall_tau(uv[:, 0], uv[:, 1])) < 3 * se


def test_sample_kendall_theta_two():
    uv = gumbel_sample(100_000, 2.0, np.random.default_rng(3))
    assert kendall_tau(uv[:, 0], uv[:, 1]) == pytest.approx(0.5, abs=0.01)


@pytest.mark.parametrize("theta", [1.0, 2.0, 10.0])
def test_sample_margins_uniform(theta):
    uv = gumbel_sample(100_000, theta, np.random.default_rng(4))
    assert uv.shape == (100_000, 2)
    for j in range(2):
        assert stats.kstest(uv[:, j], "uniform").pvalue > 0.01


def test_sample_matches_cdf():
    theta = 3.0
    uv = gumbel_sample(200_000, theta, np.random.default_rng(5))
    for u, v in [(0.2, 0.3), (0.5, 0.5), (0.9, 0.7)]:
        p = gumbel_cdf(u, v, theta)
        emp = np.mean((uv[:, 0] <= u) & (uv[:, 1] <= v))
        assert abs(emp - p) < 4 * math.sqrt(p * (1 - p) / uv.shape[0])


def test_sample_comonotone():
    uv = gumbel_sample(100, math.inf, np.random.default_rng(6))
    np.testing.assert_array_equal(uv[:, 0], uv[:, 1])


def test_sample_large_theta_stays_finite():
    uv = gumbel_sample(10_000, 500.0, np.random.default_rng(7))
    assert np.isfinite(uv).all() and ((uv >= 0) & (uv <= 1)).all()
    assert kendall_tau(uv[:, 0], uv[:, 1]) > 0.99


# -- fitting -----------------------------------------------------------------


@pytest.mark.parametrize("theta", [1.5, 2.0, 4.0])
def test_fit_round_trip(theta):
    uv = gumbel_sample(10_000, theta, np.random.default_rng(int(theta * 10)))
    fitted = fit_theta(CrossSectionPair(uv[:, 0], uv[:, 1], 1.0)).theta
    assert fitted == pytest.approx(theta, rel=0.05)


def test_fit_independent_and_comonotone():
    rng = np.random.default_rng(8)
    x = rng.normal(size=5_000)
    assert fit_theta(CrossSectionPair(x, rng.permutation(x), 1.0)).theta == pytest.approx(1.0, abs=0.03)
    assert fit_theta(CrossSectionPair(x, -x, 1.0)).theta == 1.0
    co = fit_theta(CrossSectionPair(x, np.exp(x), 1.0))
    assert co.comonotone and co.theta == math.inf


def test_fit_rank_invariance():
    uv = gumbel_sample(2_000, 2.5, np.random.default_rng(9))
    a = fit_theta(CrossSectionPair(uv[:, 0], uv[:, 1], 1.0)).theta
    b = fit_theta(CrossSectionPair(np.log(uv[:, 0]), uv[:, 1] ** 3, 1.0)).theta
    assert a == b


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_theta(CrossSectionPair(np.arange(5.0), np.arange(5.0), 1.0))
    with pytest.raises(ValueError):
        fit_theta(CrossSectionPair(np.ones(20), np.arange(20.0), 1.0))


# -- copula matrices ---------------------------------------------------------


def test_copula_matrix_independent():
    q, n = 5, 200_000
    tm = copula_transition_matrix(1.0, q, n, np.random.default_rng(10))
    se = math.sqrt((1 / q) * (1 - 1 / q) / (n / q))
    assert np.abs(tm.a - 1 / q).max() < 4 * se
    np.testing.assert_allclose(tm.row_sums(), 1.0, atol=1e-12)


def test_copula_matrix_near_identity():
    tm = copula_transition_matrix(50.0, 10, 100_000, np.random.default_rng(11))
    assert np.diag(tm.a).min() > 0.85
    band = sum(np.diag(tm.a, k).sum() for k in (-1, 0, 1))
    assert band > 0.999 * tm.q


def test_copula_matrix_min_samples():
    with pytest.raises(ValueError):
        copula_transition_matrix(2.0, 10, 999, np.random.default_rng(0))


def test_copula_matrix_asymmetry_leaves_independence():
    # top-corner minus bottom-corner persistence; rises from 0 at theta=1
    # (it shrinks again towards the comonotone limit, where both corners -> 1)
    def gap(theta):
        tm = copula_transition_matrix(theta, 10, 400_000, np.random.default_rng(12))
        return tm.a[-1, -1] - tm.a[0, 0]

    gaps = [gap(t) for t in (1.0, 1.25, 1.5, 2.0)]
    assert abs(gaps[0]) < 0.02
    assert all(b > a for a, b in zip(gaps, gaps[1:]))


@pytest.mark.slow
def test_rgbm_fitted_copula_asymmetry():
    # stationary RGBM window at tau=0.02, sigma^2=0.01, delta=20
    p = ModelParams.from_sigma_sq(0.01, mu=0.0, tau=0.02, n_agents=10_000, seed=21)
    panel = simulate(p, 270.0, [250.0, 270.0])
    pair = CrossSectionPair(panel.records[0], panel.records[1], 20.0)
    rgbm_tm = transition_matrix(pair, 10)
    assert rgbm_tm.a[-1, -1] > rgbm_tm.a[0, 0]

    theta = fit_theta(pair)
    tm = copula_transition_matrix(theta, 10, 1_000_000, np.random.default_rng(13))
    d = np.diag(tm.a)
    assert d[-1] > d[0] > d[1:-1].max()
