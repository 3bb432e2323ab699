from __future__ import annotations

import numpy as np
import pytest

from bentrank import (
    DataError,
    RankDeficientError,
    SimScenario,
    TestConfig,
    cusum_test,
    fit_null,
    generate,
    rn_process,
    tau_grid,
    test_statistic,
    validate_dataset,
    wild_bootstrap,
)
from bentrank.cusum import bootstrap_summands, kernel_density_at, multipliers
from bentrank.data import NullFit

NULL = SimScenario(reps=1, gamma_override=0.0, seed=3)


def test_config_validation():
    with pytest.raises(ValueError):
        TestConfig(nb=0)
    with pytest.raises(ValueError):
        TestConfig(q_lo=0.9, q_hi=0.1)


def test_null_fit_noiseless_line():
    z = np.linspace(-2, 2, 50)
    nf = fit_null(validate_dataset(3 + 2.5 * z, np.ones(50), z))
    assert np.max(np.abs(nf.residuals)) < 1e-8
    np.testing.assert_allclose(nf.xi, [3.0, 2.5], atol=1e-8)


def test_null_fit_ingredients():
    d = generate(NULL, 0)
    nf = fit_null(d)
    n = d.n
    # midranks: the fitted vertex ties a few residual pairs
    r = np.sort(nf.ecdf_at_residuals) * (n + 1)
    assert r.sum() == pytest.approx(n * (n + 1) / 2)
    assert np.max(np.abs(r - np.arange(1, n + 1))) <= 1.0
    assert np.all(nf.density_at_residuals >= 0)
    np.testing.assert_allclose(nf.s_wn, nf.s_wn.T)
    assert np.linalg.eigvalsh(nf.s_wn).min() > 0
    assert nf.c_phi_hat > 0


def test_kde_at_median_of_normal():
    e = np.random.default_rng(0).normal(size=500)
    h = 1.06 * e.std(ddof=1) * 500 ** -0.2
    f = kernel_density_at(e, h)
    assert f[np.argsort(e)[250]] == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.15)


def test_null_fit_rank_deficient():
    z = np.repeat([0.0, 1.0, 2.0], 4)
    x = np.column_stack([np.ones(12), z])
    with pytest.raises(RankDeficientError):
        fit_null(validate_dataset(z + 1, x, z))


def test_rn_vanishes_at_min_z():
    d = generate(NULL, 1)
    nf = fit_null(d)
    assert rn_process(nf, d, [d.z.min()])[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DataError):
        rn_process(nf, d, [])
    with pytest.raises(DataError):
        rn_process(nf, d, [d.z.max() + 1])


def test_rn_hand_computed_n4():
    # residual ranks 1..4 in index order, symmetric z
    z = np.array([-1.5, -0.5, 0.5, 1.5])
    d = validate_dataset(np.zeros(4), None, z)
    nf = NullFit(xi=np.zeros(1), residuals=np.array([-2.0, -1.0, 1.0, 2.0]),
                 ecdf_at_residuals=np.arange(1, 5) / 5, density_at_residuals=np.ones(4),
                 s_wn=np.eye(1), c_phi_hat=1.0)
    a = np.sqrt(12) * (np.arange(1, 5) / 5 - 0.5)  # (-1.0392, -0.3464, 0.3464, 1.0392)
    # t = 0.5: terms (z - t) for z <= t are -2, -1, 0
    expected = (a[0] * -2.0 + a[1] * -1.0) / 2.0
    assert rn_process(nf, d, [0.5])[0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(np.sqrt(12) * 0.35, rel=1e-12)


def test_statistic_examples():
    assert test_statistic([0.1, -0.9, 0.4]) == pytest.approx(0.9)
    assert test_statistic(np.zeros(5)) == 0.0
    with pytest.raises(DataError):
        test_statistic([])


def test_grid_is_distinct_interior_values():
    z = np.r_[np.arange(10.0), np.arange(10.0)]
    g = tau_grid(z)
    assert np.all(np.diff(g) > 0)
    assert g.min() >= np.quantile(z, 0.1) and g.max() <= np.quantile(z, 0.9)


def test_forced_zero_multipliers():
    d = generate(replace_gamma(-2.0), 0)
    nf = fit_null(d)
    res = wild_bootstrap(nf, d, TestConfig(nb=20), u=np.zeros((20, d.n)))
    assert res.t_n > 0
    assert np.all(res.bootstrap_stats == 0)
    assert res.p_value == 0.0


def replace_gamma(g):
    return SimScenario(reps=1, gamma_override=g, seed=3)


def test_result_invariants_and_determinism():
    d = generate(NULL, 2)
    cfg = TestConfig(nb=200, seed=17)
    a = cusum_test(d, cfg)
    b = cusum_test(d, cfg)
    assert a.p_value == b.p_value
    np.testing.assert_array_equal(a.bootstrap_stats, b.bootstrap_stats)
    assert a.t_n == np.max(np.abs(a.r_n_path))
    assert a.p_value == np.mean(a.bootstrap_stats >= a.t_n)
    assert a.nb == 200 and 0 <= a.p_value <= 1


def test_multiplier_streams_are_per_replicate():
    u = multipliers(5, 10, 30)
    np.testing.assert_array_equal(u[3:7], multipliers(5, 10, 30)[3:7])
    # replicate j depends only on (seed, j), not on nb
    np.testing.assert_array_equal(u[:4], multipliers(5, 4, 30))


def test_translation_invariance():
    d = generate(NULL, 4)
    a = rn_process(fit_null(d), d, tau_grid(d.z))
    d2 = d.replace(y=d.y + 123.0)
    b = rn_process(fit_null(d2), d2, tau_grid(d2.z))
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_bootstrap_summand_matrix_shape():
    d = generate(NULL, 5)
    nf = fit_null(d)
    g = tau_grid(d.z)
    m = bootstrap_summands(nf, d, g)
    assert m.shape == (d.n, g.size)


def test_null_mean_zero():
    # mean of R_n(t) over null draws is within 3 Monte Carlo SEs of 0
    sc = SimScenario(reps=1000, gamma_override=0.0, seed=8)
    grid = np.linspace(-1.5, 1.5, 7)
    paths = []
    for r in range(sc.reps):
        d = generate(sc, r)
        paths.append(rn_process(fit_null(d), d, grid))
    paths = np.array(paths)
    mean = paths.mean(axis=0)
    se = paths.std(axis=0, ddof=1) / np.sqrt(sc.reps)
    assert np.all(np.abs(mean) <= 3 * se)


def test_power_alternative_exceeds_null():
    cfg = TestConfig(nb=200)
    alt = cusum_test(generate(replace_gamma(-2.0), 0), cfg)
    assert alt.p_value < 0.05
