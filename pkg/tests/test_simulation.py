from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from bentrank import (
    ErrorKind,
    SimScenario,
    TestConfig,
    bandwidth_sweep,
    generate,
    run_estimation_study,
    run_test_study,
)
from bentrank.simulation import draw_errors, resolve_threads, summarize

import studies


def test_generate_is_deterministic_and_rep_specific():
    sc = SimScenario(reps=3, seed=4)
    a, b, c = generate(sc, 1), generate(sc, 1), generate(sc, 2)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
    assert not np.array_equal(a.z, c.z)
    assert a.n == 200 and a.p == 1
    assert np.all((a.z >= -2) & (a.z <= 2))


def test_gamma_override_reuses_draws():
    base = SimScenario(reps=1, seed=9)
    alt = SimScenario(reps=1, seed=9, gamma_override=-1.0)
    a, b = generate(base, 0), generate(alt, 0)
    np.testing.assert_array_equal(a.z, b.z)
    hinge = np.maximum(a.z - 0.5, 0.0)
    np.testing.assert_allclose(b.y - a.y, 3.0 * hinge, atol=1e-12)


def test_default_truth_and_local_alternative():
    sc = SimScenario()
    assert sc.truth.as_vector().tolist() == [3.0, 2.5, -4.0, 0.5]
    loc = SimScenario(gamma_override=2.0, local_alt=True, a_n=3.0, n=400)
    assert loc.gamma == pytest.approx(2.0 * 3.0 / 20.0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        SimScenario(reps=0)
    with pytest.raises(ValueError):
        SimScenario(contamination_rate=1.0)
    with pytest.raises(ValueError):
        SimScenario(error_kind="laplace")


def test_contaminated_count_in_binomial_band():
    # contaminated points are where the error differs from the normal component
    n, reps, rate = 200, 1000, 0.10
    total = 0
    for r in range(reps):
        e = draw_errors(np.random.default_rng([77, r]), ErrorKind.CONTAMINATED, n, rate)
        normal = np.random.default_rng([77, r]).standard_normal(n)
        total += int(np.sum(e != normal))
    lo, hi = stats.binom.interval(0.99, n * reps, rate)
    assert lo <= total <= hi
    assert total / reps == pytest.approx(20.0, abs=0.5)


def test_t3_draws_match_quantiles():
    e = draw_errors(np.random.default_rng(1), "t3", 100_000)
    q = np.quantile(e, [0.05, 0.25, 0.5, 0.75, 0.95])
    np.testing.assert_allclose(q, stats.t.ppf([0.05, 0.25, 0.5, 0.75, 0.95], 3), atol=0.03)
    assert stats.kstest(e, stats.t(3).cdf).pvalue > 0.001


def test_contaminated_draws_match_mixture():
    e = draw_errors(np.random.default_rng(2), "contaminated", 100_000)

    def cdf(x):
        return 0.9 * stats.norm.cdf(x) + 0.1 * stats.cauchy.cdf(x)

    assert stats.kstest(e, cdf).pvalue > 0.001
    # Cauchy tail mass: P(|e| > 10) = 0.1 * P(|C| > 10)
    assert np.mean(np.abs(e) > 10) == pytest.approx(0.1 * 2 * stats.cauchy.sf(10), abs=0.002)


def test_normal_draws_moments():
    e = draw_errors(np.random.default_rng(3), "normal", 100_000)
    assert abs(e.mean()) < 0.02 and abs(e.std() - 1.0) < 0.01


def test_pure_line_residuals_follow_error_law():
    d = generate(SimScenario(n=2000, reps=1, gamma_override=0.0, seed=5), 0)
    design = np.column_stack([d.x, d.z])
    resid = d.y - design @ np.linalg.lstsq(design, d.y, rcond=None)[0]
    assert stats.kstest(resid, "norm").pvalue > 0.01


def test_summarize_hand_example():
    rows = np.array([[1.0, 0.5, 0.0, 2.0], [3.0, 0.7, 2.5, 3.5]])
    m = summarize(rows, 2.0)
    assert m["bias"] == pytest.approx(0.0)
    assert m["sd"] == pytest.approx(np.sqrt(2.0))
    assert m["ese"] == pytest.approx(0.6)
    assert m["mse"] == pytest.approx(1.0)
    assert m["cp"] == pytest.approx(0.5)
    assert m["al"] == pytest.approx(1.5)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(4)),
              elements=st.floats(-1e3, 1e3)), st.floats(-10, 10))
def test_summary_metric_properties(raw, truth):
    est, se = raw[:, 0], np.abs(raw[:, 1])
    rows = np.column_stack([est, se, est - 1.96 * se, est + 1.96 * se])
    m = summarize(rows, truth)
    assert m["mse"] >= m["bias"] ** 2 - 1e-9 * (1 + m["mse"])
    assert 0.0 <= m["cp"] <= 1.0
    assert m["al"] >= 0.0
    assert (m["sd"] is None) == (rows.shape[0] == 1)


def test_single_replicate_reports_absent_sd():
    rep = run_estimation_study(SimScenario(reps=1, seed=6))
    assert len(rep.rows) == 8
    for row in rep.rows:
        assert row["sd"] is None
        assert row["reps"] == 1
    json.dumps(rep.to_dict())


def test_report_independent_of_worker_count():
    sc = SimScenario(reps=4, seed=12, error_kind="t3")
    a = run_estimation_study(sc, threads=1)
    b = run_estimation_study(sc, threads=2)
    assert a.rows == b.rows


def test_thread_resolution(monkeypatch):
    monkeypatch.setenv("BENTRANK_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("BENTRANK_THREADS")
    assert resolve_threads(None) == 1


def test_single_bandwidth_sweep_matches_size_study():
    sc = SimScenario(reps=20, seed=13)
    cfg = TestConfig(nb=200, seed=13)
    sw = bandwidth_sweep(sc, [1.06], cfg)
    size = run_test_study([sc], [0.0], ("rank",), cfg)
    assert len(sw.rows) == 1
    assert sw.rows[0]["rate"] == size.rows[0]["rate"]
    assert sw.rows[0]["rejections"] == size.rows[0]["rejections"]


def test_report_files(tmp_path):
    rep = run_estimation_study(SimScenario(reps=2, seed=14), ("ls",))
    rep.write_csv(tmp_path / "r.csv")
    rep.write_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 1 + 4
    assert json.loads((tmp_path / "r.json").read_text())["rows"][0]["parameter"] == "beta0"


# Monte Carlo invariants; the studies are shared with the acceptance suite.

REFERENCE_CP_CASE1 = {"beta0": 0.958, "beta": 0.942, "gamma": 0.934, "tau": 0.916}


def test_case1_rank_coverage_near_reference():
    reports = [studies.estimation("normal", 500, studies.SEED), studies.estimation("normal", 500, studies.SEED + 1)]
    for name, ref in REFERENCE_CP_CASE1.items():
        rows = [r.get(method="rank", parameter=name) for r in reports]
        assert abs(studies.pooled(rows, "cp") - ref) <= 0.03, name


def test_rank_tau_mse_not_worse_than_ls_under_heavy_tails():
    for kind, reps in (("t3", 300), ("contaminated", 500)):
        rep = studies.estimation(kind, reps)
        rank = rep.get(method="rank", parameter="tau")["mse"]
        ls = rep.get(method="ls", parameter="tau")["mse"]
        assert rank <= ls, kind


def test_null_pvalues_are_uniform():
    p = studies.pvalues("normal", 0.0, 500)["rank"][:200]
    assert stats.kstest(p, "uniform").statistic < stats.kstwo.ppf(0.99, 200)


def test_power_increases_with_slope_change():
    rates = [studies.rejection_rate(studies.pvalues("normal", g, 500, ("rank",) if g else ("rank", "ls"))["rank"])
             for g in (0.0, -1.0, -2.0)]
    assert rates[0] < rates[1] <= rates[2]
