"""Monte Carlo studies: estimation accuracy, test size and power, bandwidth sensitivity.

Every replicate draws from its own generator seeded by
``(seed, scenario_id, rep)``, so reports do not depend on how replicates are
scheduled across worker processes. The scenario id depends on the error law
and ``n`` only; scenarios that differ in ``gamma`` reuse the same draws, which
makes power comparisons across ``gamma`` paired.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Iterable, Sequence

import numpy as np

from .bentfit import FitConfig, fit_bent_line
from .baseline import fit_ls_bent_line, ls_cusum_test
from .cusum import TestConfig, cusum_test
from .data import BentLineParams, BentRankError, ConvergenceWarning, Dataset, predict, validate_dataset

if TYPE_CHECKING:
    from pathlib import Path


class ErrorKind(str, Enum):
    NORMAL = "normal"
    T3 = "t3"
    CONTAMINATED = "contaminated"


DEFAULT_PARAMS = BentLineParams(alpha=np.array([3.0]), beta=2.5, gamma=-4.0, tau=0.5)


@dataclass(frozen=True)
class SimScenario:
    """One data-generating setting.

    ``y = alpha0 + beta z + gamma (z - tau)_+ + e`` with ``z ~ U(z_low, z_high)``.
    ``gamma_override`` replaces ``true_params.gamma``; with ``local_alt`` set the
    hinge coefficient is further multiplied by ``a_n / sqrt(n)``.
    """

    n: int = 200
    reps: int = 1000
    error_kind: ErrorKind | str = ErrorKind.NORMAL
    true_params: BentLineParams = DEFAULT_PARAMS
    z_low: float = -2.0
    z_high: float = 2.0
    gamma_override: float | None = None
    local_alt: bool = False
    a_n: float = 1.0
    contamination_rate: float = 0.10
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "error_kind", ErrorKind(self.error_kind))
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0.0 <= self.contamination_rate < 1.0:
            raise ValueError("contamination_rate must lie in [0, 1)")
        if self.true_params.alpha.size != 1:
            raise ValueError("true_params.alpha must hold just the intercept")

    @property
    def scenario_id(self) -> int:
        return zlib.crc32(f"{self.error_kind.value}|{self.n}".encode())

    @property
    def gamma(self) -> float:
        g = self.true_params.gamma if self.gamma_override is None else self.gamma_override
        if self.local_alt:
            g *= self.a_n / np.sqrt(self.n)
        return float(g)

    @property
    def truth(self) -> BentLineParams:
        return replace(self.true_params, gamma=self.gamma)

    def describe(self) -> dict[str, Any]:
        d = asdict(self)
        d["error_kind"] = self.error_kind.value
        d["true_params"] = {"alpha": self.true_params.alpha.tolist(), "beta": self.true_params.beta,
                            "gamma": self.true_params.gamma, "tau": self.true_params.tau}
        d["effective_gamma"] = self.gamma
        return d


def draw_errors(rng: np.random.Generator, kind: ErrorKind | str, n: int,
                contamination_rate: float = 0.10) -> np.ndarray:
    """Standard normal, t with 3 df, or normal with each point swapped for a Cauchy draw."""
    kind = ErrorKind(kind)
    if kind is ErrorKind.NORMAL:
        return rng.standard_normal(n)
    if kind is ErrorKind.T3:
        return rng.standard_t(3, n)
    e = rng.standard_normal(n)
    swap = rng.random(n) < contamination_rate
    cauchy = rng.standard_cauchy(n)
    return np.where(swap, cauchy, e)


def generate(scenario: SimScenario, rep_index: int) -> Dataset:
    """Dataset for replicate ``rep_index``; x is a single intercept column."""
    rng = np.random.default_rng([scenario.seed, scenario.scenario_id, rep_index])
    n = scenario.n
    z = rng.uniform(scenario.z_low, scenario.z_high, n)
    e = draw_errors(rng, scenario.error_kind, n, scenario.contamination_rate)
    x = np.ones((n, 1))
    y = predict(scenario.truth, x, z) + e
    return validate_dataset(y, x, z, x_names=("intercept",))


@dataclass
class SimReport:
    """Rows of a simulation study plus the settings that produced them.

    ``kind`` is ``"estimation"``, ``"test"`` or ``"sweep"``. Metrics that are
    undefined (e.g. SD from a single replicate) are ``None``.
    """

    kind: str
    rows: list[dict[str, Any]]
    settings: dict[str, Any] = field(default_factory=dict)

    def select(self, **match: Any) -> list[dict[str, Any]]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def get(self, **match: Any) -> dict[str, Any]:
        rows = self.select(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return rows[0]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "settings": self.settings, "rows": self.rows}

    def write_csv(self, path: str | Path) -> None:
        if not self.rows:
            raise ValueError("report has no rows")
        keys = list(self.rows[0])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: "" if r.get(k) is None else r.get(k) for k in keys})

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def resolve_threads(threads: int | None) -> int:
    """``threads`` if given, else ``$BENTRANK_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("BENTRANK_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def _map(func: Callable[[Any], Any], items: Sequence[Any], threads: int) -> list[Any]:
    if threads == 1 or len(items) < 2:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * threads))))


FITTERS = {"rank": fit_bent_line, "ls": fit_ls_bent_line}
TESTS = {"rank": cusum_test, "ls": ls_cusum_test}
PARAM_NAMES = ("beta0", "beta", "gamma", "tau")


def _estimation_rep(args: tuple[SimScenario, int, tuple[str, ...], FitConfig]) -> dict[str, Any]:
    scenario, rep, methods, config = args
    data = generate(scenario, rep)
    out: dict[str, Any] = {}
    for m in methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                fit = FITTERS[m](data, config)
        except BentRankError:
            out[m] = None
            continue
        if not fit.converged:
            out[m] = None
            continue
        rows = fit.param_table()
        out[m] = np.array([[r["estimate"], r["se"], r["ci_lower"], r["ci_upper"]] for r in rows])
    return out


def summarize(estimates: np.ndarray, truth: float) -> dict[str, float | None]:
    """Bias, SD, ESE, MSE, CP, AL from rows of ``(estimate, se, ci_lower, ci_upper)``."""
    k = estimates.shape[0]
    if k == 0:
        return dict.fromkeys(("bias", "sd", "ese", "mse", "cp", "al"))
    est, se, lo, hi = estimates.T
    err = est - truth
    finite = np.isfinite(se)
    return {
        "bias": float(err.mean()),
        "sd": float(est.std(ddof=1)) if k > 1 else None,
        "ese": float(se[finite].mean()) if finite.any() else None,
        "mse": float(np.mean(err**2)),
        "cp": float(np.mean((lo <= truth) & (truth <= hi))) if finite.any() else None,
        "al": float(np.mean(hi - lo)) if finite.any() else None,
    }


def run_estimation_study(scenario: SimScenario, methods: Iterable[str] = ("rank", "ls"),
                         config: FitConfig | None = None, threads: int | None = None) -> SimReport:
    """Per-parameter Bias, SD, ESE, MSE, CP and AL for each estimator.

    Replicates in which a method raises or fails to converge are counted in
    ``failures`` and left out of that method's metrics.
    """
    methods = tuple(methods)
    config = config or FitConfig()
    jobs = [(scenario, r, methods, config) for r in range(scenario.reps)]
    results = _map(_estimation_rep, jobs, resolve_threads(threads))
    truth = scenario.truth.as_vector()
    rows = []
    for m in methods:
        ok = [res[m] for res in results if res[m] is not None]
        stack = np.stack(ok) if ok else np.empty((0, len(PARAM_NAMES), 4))
        for j, name in enumerate(PARAM_NAMES):
            rows.append({
                "case": scenario.error_kind.value,
                "method": m,
                "parameter": name,
                "truth": float(truth[j]),
                **summarize(stack[:, j, :], float(truth[j])),
                "reps": scenario.reps,
                "failures": scenario.reps - len(ok),
            })
    return SimReport("estimation", rows, {"scenario": scenario.describe(), "fit_config": asdict(config)})


def _rep_seed(base: int, scenario: SimScenario, rep: int) -> int:
    ss = np.random.SeedSequence([base, scenario.seed, scenario.scenario_id, rep])
    return int(ss.generate_state(1, np.uint32)[0])


def _test_rep(args: tuple[SimScenario, int, tuple[str, ...], TestConfig]) -> dict[str, float | None]:
    scenario, rep, methods, config = args
    data = generate(scenario, rep)
    cfg = replace(config, seed=_rep_seed(config.seed, scenario, rep))
    out: dict[str, float | None] = {}
    for m in methods:
        try:
            out[m] = TESTS[m](data, cfg).p_value
        except BentRankError:
            out[m] = None
    return out


def test_pvalues(scenario: SimScenario, methods: Iterable[str] = ("rank", "ls"),
                 config: TestConfig | None = None, threads: int | None = None) -> dict[str, np.ndarray]:
    """Bootstrap p-values per replicate for each test; NaN marks a failed replicate."""
    methods = tuple(methods)
    config = config or TestConfig()
    jobs = [(scenario, r, methods, config) for r in range(scenario.reps)]
    results = _map(_test_rep, jobs, resolve_threads(threads))
    return {m: np.array([np.nan if r[m] is None else r[m] for r in results]) for m in methods}


test_pvalues.__test__ = False  # type: ignore[attr-defined]


def _rejection_row(p: np.ndarray, level: float) -> dict[str, Any]:
    ok = p[np.isfinite(p)]
    return {
        "reps": int(p.size),
        "failures": int(p.size - ok.size),
        "rejections": int(np.sum(ok < level)),
        "rate": float(np.mean(ok < level)) if ok.size else None,
    }


def run_test_study(scenarios: Iterable[SimScenario], gammas: Iterable[float] = (-2, -1, 0, 1, 2),
                   methods: Iterable[str] = ("rank", "ls"), config: TestConfig | None = None,
                   threads: int | None = None) -> SimReport:
    """Rejection rate of each test for every (case, gamma) cell.

    A replicate rejects when its bootstrap p-value is below ``config.level``.
    """
    methods = tuple(methods)
    config = config or TestConfig()
    rows = []
    cases = list(scenarios)
    for sc in cases:
        for g in gammas:
            cell = replace(sc, gamma_override=float(g))
            pv = test_pvalues(cell, methods, config, threads)
            for m in methods:
                rows.append({"case": sc.error_kind.value, "gamma": float(g), "effective_gamma": cell.gamma,
                             "method": m, **_rejection_row(pv[m], config.level)})
    settings = {"scenarios": [s.describe() for s in cases], "test_config": _config_dict(config)}
    return SimReport("test", rows, settings)


run_test_study.__test__ = False  # type: ignore[attr-defined]


def bandwidth_sweep(scenario: SimScenario, c_values: Iterable[float],
                    config: TestConfig | None = None, threads: int | None = None) -> SimReport:
    """Size of the rank test (``gamma = 0``) for each bandwidth multiplier."""
    config = config or TestConfig()
    null = replace(scenario, gamma_override=0.0, local_alt=False)
    rows = []
    for c in c_values:
        cfg = replace(config, bandwidth_mult=float(c))
        pv = test_pvalues(null, ("rank",), cfg, threads)["rank"]
        rows.append({"case": null.error_kind.value, "bandwidth_mult": float(c), **_rejection_row(pv, config.level)})
    return SimReport("sweep", rows, {"scenario": null.describe(), "test_config": _config_dict(config)})


def _config_dict(config: TestConfig) -> dict[str, Any]:
    d = asdict(config)
    d["kernel"] = config.kernel.value  # type: ignore[union-attr]
    return d


__all__ = [
    "DEFAULT_PARAMS",
    "ErrorKind",
    "SimReport",
    "SimScenario",
    "bandwidth_sweep",
    "draw_errors",
    "generate",
    "resolve_threads",
    "run_estimation_study",
    "run_test_study",
    "summarize",
    "test_pvalues",
]
