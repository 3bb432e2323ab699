from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from bentrank import SIGN, WILCOXON, DataError, RankDeficientError, dispersion, estimate_c_phi, fit_rank_linear, ranks
from bentrank.rank import SQRT12

U = np.linspace(1e-6, 1 - 1e-6, 200001)


@pytest.mark.parametrize("score", [WILCOXON, SIGN])
def test_score_is_standardized_and_monotone(score):
    phi = score(U)
    assert np.all(np.diff(phi) >= 0)
    assert abs(np.trapezoid(phi, U)) < 1e-4
    assert np.trapezoid(phi**2, U) == pytest.approx(1.0, abs=1e-4)


def test_ranks_examples():
    np.testing.assert_array_equal(ranks([3.1, -2.0, 7.7]), [2, 1, 3])
    np.testing.assert_array_equal(ranks([5, 5, 1]), [2.5, 2.5, 1])
    with pytest.raises(DataError):
        ranks([1.0, np.inf])


vec = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(v=vec, seed=st.integers(0, 2**16))
def test_midranks_sum_and_permutation(v, seed):
    r = ranks(v)
    assert r.sum() == pytest.approx(v.size * (v.size + 1) / 2)
    # midrank definition: rank = (#less) + (#equal + 1) / 2
    less = (v[None, :] < v[:, None]).sum(axis=1)
    eq = (v[None, :] == v[:, None]).sum(axis=1)
    np.testing.assert_allclose(r, less + (eq + 1) / 2)
    perm = np.random.default_rng(seed).permutation(v.size)
    np.testing.assert_allclose(ranks(v[perm]), r[perm])


def _pairwise(e):
    n = e.size
    return SQRT12 / (2 * (n + 1)) * sum(abs(a - b) for a, b in combinations(e, 2))


def test_dispersion_examples():
    assert dispersion(np.full(6, 2.5)) == 0.0
    assert dispersion([0.0, 1.0]) == pytest.approx(SQRT12 / 6, abs=1e-12)
    e = np.random.default_rng(1).normal(size=20)
    assert dispersion(e) == pytest.approx(_pairwise(e), abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(e=arrays(np.float64, st.integers(2, 30), elements=st.floats(-100, 100, allow_nan=False)),
       c=st.floats(-100, 100), k=st.floats(0.01, 100))
def test_dispersion_invariances(e, c, k):
    d = dispersion(e)
    assert d >= 0
    assert d == pytest.approx(_pairwise(e), rel=1e-9, abs=1e-9)
    assert dispersion(e + c) == pytest.approx(d, rel=1e-9, abs=1e-8)
    assert dispersion(k * e) == pytest.approx(k * d, rel=1e-9, abs=1e-9)


def _lp_oracle(y, w):
    # min sum_{i<j} |r_ij - d_ij b| as an LP in (b, u+, u-)
    i, j = np.triu_indices(y.size, 1)
    d, r = w[i] - w[j], y[i] - y[j]
    m, q = d.shape
    c = np.concatenate([np.zeros(q), np.ones(2 * m)])
    a_eq = np.hstack([d, np.eye(m), -np.eye(m)])
    res = linprog(c, A_eq=a_eq, b_eq=r, bounds=[(None, None)] * q + [(0, None)] * (2 * m), method="highs")
    return res.x[:q]


@pytest.mark.parametrize("seed", range(4))
def test_fit_matches_lp_oracle(seed):
    rng = np.random.default_rng(seed)
    n, q = 30, 2
    w = rng.normal(size=(n, q))
    y = w @ [1.0, -2.0] + rng.standard_t(2, n)
    fit = fit_rank_linear(y, w, inference=False)
    oracle = _lp_oracle(y, w)
    assert dispersion(y - w @ fit.coefficients) <= dispersion(y - w @ oracle) + 1e-10
    np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-6)


def test_zero_noise_recovery():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(50, 3))
    b = np.array([0.5, -1.0, 2.0])
    fit = fit_rank_linear(7.0 + w @ b, w)
    np.testing.assert_allclose(fit.coefficients, b, atol=1e-6)
    assert fit.intercept == pytest.approx(7.0, abs=1e-6)


def test_slope_within_three_se():
    rng = np.random.default_rng(4)
    z = rng.uniform(-2, 2, 200)
    fit = fit_rank_linear(3 + 2.5 * z + rng.normal(size=200), z[:, None])
    se = np.sqrt(fit.covariance[0, 0])
    assert abs(fit.coefficients[0] - 2.5) < 3 * se
    assert fit.dispersion_value == pytest.approx(dispersion(fit.residuals))
    assert np.all(np.linalg.eigvalsh(fit.covariance) >= -1e-12)


def test_regression_equivariance_and_optimality():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(80, 2))
    y = w @ [1.0, 1.0] + rng.standard_cauchy(80)
    fit = fit_rank_linear(y, w, inference=False)
    c = np.array([0.3, -4.0])
    shifted = fit_rank_linear(y + w @ c, w, inference=False)
    np.testing.assert_allclose(shifted.coefficients, fit.coefficients + c, atol=1e-8)
    d0 = dispersion(y - w @ fit.coefficients)
    for _ in range(100):
        delta = rng.normal(size=2)
        delta *= 1e-3 / np.linalg.norm(delta)
        assert d0 <= dispersion(y - w @ (fit.coefficients + delta)) + 1e-8


def test_sign_score_fit_is_lad():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(40, 1))
    y = 2 * w[:, 0] + rng.laplace(size=40)
    fit = fit_rank_linear(y, w, SIGN, inference=False)
    d0 = dispersion(fit.residuals, SIGN)
    for b in fit.coefficients[0] + np.linspace(-0.05, 0.05, 21):
        assert d0 <= dispersion(y - b * w[:, 0], SIGN) + 1e-10


def test_rank_deficient_design():
    w = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(RankDeficientError):
        fit_rank_linear(np.arange(10.0), w)
    with pytest.raises(RankDeficientError):
        fit_rank_linear(np.arange(10.0), np.ones((10, 1)))


def test_c_phi_normal_and_uniform():
    rng = np.random.default_rng(7)
    assert estimate_c_phi(rng.normal(size=2000)) == pytest.approx(1 / (SQRT12 / (2 * np.sqrt(np.pi))), rel=0.10)
    assert estimate_c_phi(rng.uniform(size=2000)) == pytest.approx(1 / SQRT12, rel=0.10)


def test_c_phi_scale_equivariance():
    e = np.random.default_rng(8).standard_t(5, 300)
    c = estimate_c_phi(e, bandwidth=0.3)
    assert estimate_c_phi(3 * e, bandwidth=0.9) == pytest.approx(3 * c, rel=1e-12)
    assert estimate_c_phi(3 * e) == pytest.approx(3 * estimate_c_phi(e), rel=1e-12)


def test_c_phi_errors():
    with pytest.raises(DataError):
        estimate_c_phi(np.ones(20))
    with pytest.raises(DataError):
        estimate_c_phi(np.arange(5.0))


def test_c_phi_resists_outliers():
    rng = np.random.default_rng(9)
    e = rng.normal(size=400)
    dirty = e.copy()
    dirty[:20] = 1e4 * rng.standard_cauchy(20)
    assert estimate_c_phi(dirty) == pytest.approx(estimate_c_phi(e), rel=0.25)
