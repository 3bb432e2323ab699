"""Rank-based bent line estimation by iterative linear reparameterization.

At a working change point ``t`` the hinge is linearized,

    (z - tau)_+  ~  (z - t)_+ - I(z > t) (tau - t),

so the model becomes linear in ``(alpha, beta, gamma, eta)`` with
``eta = gamma (tau - t)``. Each iteration rank-fits that linear model and moves
the change point to ``t + eta / gamma``. The covariance of the final linear
fit gives Wald standard errors for every coefficient and, through the delta
method, for ``tau``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Literal, Protocol

import numpy as np
from scipy.stats import norm

from .data import (
    BentLineFit,
    BentLineParams,
    Dataset,
    ConvergenceWarning,
    DataError,
    IdentifiabilityError,
    NumericalError,
    RankDeficientError,
    predict,
)
from .rank import WILCOXON, ScoreFunction, as_score, dispersion, fit_rank_linear

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class FitConfig:
    """Controls for the iterative fit.

    ``tau_init="auto"`` scans the deciles of z and starts from the one with the
    smallest fixed-change-point objective. ``damping`` shrinks a change-point
    step that would leave the interior of the z range before it is clamped.
    ``polish_width`` (in standard errors of the change point) sets how far the
    interval scan looks for a lower profile value after the iteration settles;
    0 turns the scan off.
    """

    tau_init: float | Literal["auto"] = "auto"
    eta_init: float = 0.01
    tol: float = 1e-5
    max_iter: int = 100
    ci_level: float = 0.95
    gamma_floor: float = 1e-8
    damping: float = 1.0
    max_halvings: int = 10
    min_side: int = 3
    polish_width: float = 2.0
    polish_rounds: int = 5

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.polish_width < 0 or self.polish_rounds < 0:
            raise ValueError("polish_width and polish_rounds must be non-negative")


@dataclass
class LinearFit:
    """Coefficients over all design columns (intercept included), their covariance, objective."""

    coef: NDArray[np.floating[Any]]
    cov: NDArray[np.floating[Any]]
    objective: float
    scale: float
    offset: float = 0.0


class Engine(Protocol):
    """A loss-specific linear fitter used by the iteration."""

    name: str

    def fit(self, y: NDArray[np.floating[Any]], design: NDArray[np.floating[Any]],
            start: NDArray[np.floating[Any]] | None, inference: bool) -> LinearFit: ...

    def objective(self, residuals: NDArray[np.floating[Any]]) -> float: ...


def constant_columns(design: NDArray[np.floating[Any]]) -> NDArray[np.intp]:
    """Indices of columns that are constant and non-zero."""
    if design.shape[1] == 0:
        return np.empty(0, dtype=np.intp)
    return np.flatnonzero((np.ptp(design, axis=0) == 0.0) & (design[0] != 0.0))


class RankEngine:
    """Jaeckel rank fit; a constant column in the design carries the median intercept."""

    name = "rank"

    def __init__(self, score: ScoreFunction | str = WILCOXON) -> None:
        self.score = as_score(score)

    def objective(self, residuals: NDArray[np.floating[Any]]) -> float:
        return dispersion(residuals, self.score)

    def fit(self, y, design, start=None, inference=True) -> LinearFit:
        k = design.shape[1]
        const = constant_columns(design)
        if const.size > 1:
            raise RankDeficientError("design has more than one constant column")
        free = np.setdiff1d(np.arange(k), const)
        if start is not None:
            start = np.asarray(start, dtype=float)[free]
        rf = fit_rank_linear(y, design[:, free], self.score, start=start, inference=inference)
        coef = np.zeros(k)
        coef[free] = rf.coefficients
        cov = np.full((k, k), np.nan)
        cov[np.ix_(free, free)] = rf.covariance
        offset = rf.intercept
        if const.size:
            c = const[0]
            level = design[0, c]
            coef[c] = rf.intercept / level
            offset = 0.0
            if rf.intercept_cov is not None:
                cov[c, c] = rf.intercept_var / level**2
                cov[c, free] = cov[free, c] = rf.intercept_cov / level
        return LinearFit(coef, cov, rf.dispersion_value, rf.c_phi_hat, offset)


def linearized_design(dataset: Dataset, tau0: float) -> NDArray[np.floating[Any]]:
    """Columns ``x, z, (z - tau0)_+, -I(z > tau0)``.

    Raises
    ------
    DataError
        If ``tau0`` lies outside ``[min z, max z]``.
    RankDeficientError
        If no observation lies strictly above ``tau0`` (hinge and indicator vanish).
    """
    z = dataset.z
    if not (z.min() <= tau0 <= z.max()):
        raise DataError(f"tau0={tau0} lies outside [{z.min()}, {z.max()}]")
    above = z > tau0
    if not above.any():
        raise RankDeficientError("no observations above tau0; hinge columns are all zero")
    hinge = np.where(above, z - tau0, 0.0)
    return np.column_stack([dataset.x, z, hinge, -above.astype(float)])


def _fixed_design(dataset: Dataset, tau: float) -> NDArray[np.floating[Any]]:
    return np.column_stack([dataset.x, dataset.z, np.maximum(dataset.z - tau, 0.0)])


def profile_objective(dataset: Dataset, tau: float, engine: Engine | None = None,
                      start: ArrayLike | None = None) -> LinearFit:
    """Best fit of the bent line with the change point held at ``tau``."""
    engine = RankEngine() if engine is None else engine
    return engine.fit(dataset.y, _fixed_design(dataset, tau),
                      None if start is None else np.asarray(start, float), False)


def se_tau(cov_gamma_eta: ArrayLike, gamma_hat: float, eta_hat: float) -> float:
    """Delta-method standard error of ``tau_hat = t + eta_hat / gamma_hat``.

    Parameters
    ----------
    cov_gamma_eta : array_like, shape (2, 2)
        Covariance of ``(gamma_hat, eta_hat)`` in that order.

    Returns
    -------
    float
        ``sqrt(Var(eta) + Var(gamma) r^2 + 2 r Cov(eta, gamma)) / |gamma|``
        with ``r = eta / gamma``.
    """
    c = np.asarray(cov_gamma_eta, dtype=float)
    if c.shape != (2, 2):
        raise DataError("cov_gamma_eta must be 2x2")
    if gamma_hat == 0.0:
        raise IdentifiabilityError("gamma_hat is zero; tau is not identified")
    r = eta_hat / gamma_hat
    v = c[1, 1] + c[0, 0] * r * r + 2.0 * r * c[0, 1]
    if v < 0.0:
        if v > -1e-12 * max(abs(c[1, 1]), 1e-300):
            v = 0.0
        else:
            raise NumericalError(f"negative variance {v:.3g} for tau_hat; covariance is not PSD")
    return float(np.sqrt(v) / abs(gamma_hat))


def _split(coef: NDArray[np.floating[Any]], p: int) -> tuple[NDArray[np.floating[Any]], float, float, float]:
    return coef[:p], float(coef[p]), float(coef[p + 1]), float(coef[p + 2])


def _z_spacing(z: NDArray[np.floating[Any]]) -> float:
    u = np.unique(z)
    return float((u[-1] - u[0]) / (u.size - 1))


def initial_tau(dataset: Dataset, engine: Engine) -> tuple[float, LinearFit]:
    """Decile pre-scan: the decile of z with the smallest fixed-change-point objective."""
    best: tuple[float, LinearFit] | None = None
    warm = None
    for q in np.linspace(0.1, 0.9, 9):
        t = float(np.quantile(dataset.z, q))
        try:
            lf = profile_objective(dataset, t, engine, warm)
        except RankDeficientError:
            continue
        warm = lf.coef
        if best is None or lf.objective < best[1].objective:
            best = (t, lf)
    if best is None:
        raise IdentifiabilityError("no decile of z gives an estimable bent line")
    return best


def _iterate(dataset: Dataset, config: FitConfig, engine: Engine, tau: float, lf0: LinearFit,
             lo: float, hi: float) -> tuple[float, NDArray[np.floating[Any]], int, bool]:
    """Linearize-and-update loop from ``tau``; returns the working tau, start, iterations, convergence."""
    y, z, p = dataset.y, dataset.z, dataset.p
    theta_prev = lf0.coef[: p + 2]
    obj = lf0.objective
    start = np.concatenate([lf0.coef, [0.0]])
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        below = int(np.sum(z <= tau))
        if below < config.min_side or dataset.n - below < config.min_side:
            raise IdentifiabilityError(
                f"fewer than {config.min_side} observations on one side of tau={tau:.6g}"
            )
        design = linearized_design(dataset, tau)
        lf = engine.fit(y, design, start, False)
        alpha, beta, gamma, eta = _split(lf.coef, p)
        if abs(gamma) < config.gamma_floor:
            raise IdentifiabilityError(
                "slope change collapsed to zero; test for a change point before fitting"
            )
        step = eta / gamma
        if not lo <= tau + step <= hi:
            step *= config.damping
        for _ in range(config.max_halvings + 1):
            cand = float(np.clip(tau + step, lo, hi))
            trial = BentLineParams(alpha, beta, gamma, cand, lf.offset)
            obj_c = engine.objective(y - predict(trial, dataset.x, z))
            if obj_c <= obj + 1e-12 * (1.0 + abs(obj)):
                break
            step *= 0.5
        else:
            # no descent along this step: stay put, so the next pass repeats theta
            cand, obj_c = tau, obj
        theta = lf.coef[: p + 2]
        done = float(np.max(np.abs(theta - theta_prev))) < config.tol
        theta_prev = theta
        tau, obj = cand, obj_c
        start = np.concatenate([theta, [0.0]])
        if done:
            return tau, start, iterations, True
    return tau, start, iterations, False


def _interval_scan(dataset: Dataset, engine: Engine, tau_hat: float, half_width: float,
                   best: float, lo: float, hi: float, start: NDArray[np.floating[Any]],
                   cache: dict[Any, Any] | None = None,
                   min_intervals: int = 3) -> tuple[float, float] | None:
    """Look for a lower profile value between neighbouring distinct z values near ``tau_hat``.

    Between consecutive distinct z values the hinge is exactly linear in tau,
    so the unconstrained linear fit on that interval bounds the profile from
    below and attains it when its implied change point stays inside. When it
    does not, the interval minimum sits at an endpoint. Returns the best
    ``(tau, objective)`` found below ``best``, or None. ``cache`` carries
    interval fits and endpoint profiles between calls on the same data.
    """
    cache = {} if cache is None else cache
    u = np.unique(dataset.z)
    u = u[(u > lo) & (u < hi)]
    knots = np.concatenate([[lo], u, [hi]])
    centre = int(np.searchsorted(knots, tau_hat))
    left = min(int(np.searchsorted(knots, tau_hat - half_width)), centre - min_intervals)
    right = max(int(np.searchsorted(knots, tau_hat + half_width)), centre + min_intervals)
    left, right = max(left, 0), min(right, knots.size - 1)
    thresh = best - 1e-12 * (1.0 + abs(best))
    found: tuple[float, float] | None = None
    p = dataset.p
    # sweep outwards from the estimate so each interval warm-starts from its neighbour
    sweeps = (range(max(centre - 1, left), right), range(max(centre - 2, left - 1), left - 1, -1))
    for sweep in sweeps:
        warm = start
        for k in sweep:
            a, b = float(knots[k]), float(knots[k + 1])
            if b <= a:
                continue
            if (a, b) not in cache:
                mid = 0.5 * (a + b)
                try:
                    lf = engine.fit(dataset.y, linearized_design(dataset, mid), warm, False)
                except RankDeficientError:
                    cache[a, b] = None
                    continue
                _, _, gamma, eta = _split(lf.coef, p)
                cache[a, b] = (lf.objective, mid + eta / gamma if gamma != 0.0 else np.inf, lf.coef)
            entry = cache[a, b]
            if entry is None:
                continue
            bound, t_star, warm = entry
            if bound >= thresh:
                continue
            if a <= t_star <= b:
                val, loc = bound, float(t_star)
            else:
                val, loc = np.inf, a
                for t in (a, b):
                    if t not in cache:
                        cache[t] = profile_objective(dataset, t, engine, warm[:-1]).objective
                    if cache[t] < val:
                        val, loc = cache[t], t
            if val < thresh:
                thresh = val - 1e-12 * (1.0 + abs(val))
                found = (loc, val)
    return found


def _candidates(dataset: Dataset, engine: Engine, tau: float, start: NDArray[np.floating[Any]],
                lo: float, hi: float) -> list[tuple[float, float, LinearFit]]:
    """Profile fits at the working change point and at its one-step update."""
    lin = engine.fit(dataset.y, linearized_design(dataset, tau), start, False)
    _, _, gamma, eta = _split(lin.coef, dataset.p)
    out = []
    points = [tau]
    if gamma != 0.0:
        points.append(float(np.clip(tau + eta / gamma, lo, hi)))
    for t in points:
        prof = profile_objective(dataset, t, engine, start[:-1])
        out.append((prof.objective, t, prof))
    return out


def fit_iterative(dataset: Dataset, config: FitConfig, engine: Engine,
                  result_cls: type[BentLineFit] = BentLineFit) -> BentLineFit:
    """Shared iteration for the rank fit and its least-squares counterpart.

    The linearized iteration is run to convergence and the estimate is the
    change point with the lowest profile objective among those it visits.
    The profile is then scanned interval by interval within ``polish_width``
    standard errors; if a lower value turns up the iteration restarts there.
    Coefficients come from the fit with the change point held at the
    estimate, and the covariance from the linearized design at it.
    """
    z = dataset.z
    spacing = _z_spacing(z)
    lo, hi = float(z.min()) + spacing, float(z.max()) - spacing

    if config.tau_init == "auto":
        tau, lf0 = initial_tau(dataset, engine)
    else:
        tau = float(config.tau_init)
        if not lo <= tau <= hi:
            tau = float(np.clip(tau, lo, hi))
        lf0 = profile_objective(dataset, tau, engine)

    tau, start, total, converged = _iterate(dataset, config, engine, tau, lf0, lo, hi)
    best = min(_candidates(dataset, engine, tau, start, lo, hi), key=lambda c: c[0])
    lin = _inference_fit(dataset, engine, best)
    if config.polish_width > 0 and converged:
        cache: dict[Any, Any] = {}
        for _ in range(config.polish_rounds):
            fit = _assemble(dataset, config, engine, lin, best, total, converged, result_cls, warn=False)
            width = config.polish_width * fit.se_tau if np.isfinite(fit.se_tau) else 0.0
            hit = _interval_scan(dataset, engine, best[1], width, best[0], lo, hi,
                                 np.concatenate([best[2].coef, [0.0]]), cache)
            if hit is None:
                break
            prof = profile_objective(dataset, hit[0], engine, best[2].coef)
            cands = [(prof.objective, hit[0], prof)]
            tau, start, iters, converged = _iterate(dataset, config, engine, hit[0], prof, lo, hi)
            total += iters
            cands += _candidates(dataset, engine, tau, start, lo, hi)
            new = min(cands, key=lambda c: c[0])
            if not new[0] < best[0]:
                break
            best = new
            lin = _inference_fit(dataset, engine, best)
    return _assemble(dataset, config, engine, lin, best, total, converged, result_cls)


def _inference_fit(dataset: Dataset, engine: Engine, best: tuple[float, float, LinearFit]) -> LinearFit:
    start = np.concatenate([best[2].coef, [0.0]])
    return engine.fit(dataset.y, linearized_design(dataset, best[1]), start, True)


def _assemble(dataset: Dataset, config: FitConfig, engine: Engine, lin: LinearFit,
              best: tuple[float, float, LinearFit], iterations: int, converged: bool,
              result_cls: type[BentLineFit], warn: bool = True) -> BentLineFit:
    p = dataset.p
    _, tau_hat, prof = best
    alpha, beta, gamma = prof.coef[:p], float(prof.coef[p]), float(prof.coef[p + 1])
    eta = float(lin.coef[p + 2])
    if abs(gamma) < config.gamma_floor:
        raise IdentifiabilityError("slope change collapsed to zero")
    params = BentLineParams(alpha, beta, gamma, tau_hat, prof.offset)
    cov = lin.cov
    if np.all(np.isfinite(cov)):
        cov = 0.5 * (cov + cov.T)
        s_tau = se_tau(cov[np.ix_([p + 1, p + 2], [p + 1, p + 2])], gamma, eta)
        se = np.sqrt(np.clip(np.diag(cov)[: p + 2], 0.0, None))
    else:
        s_tau = float("nan")
        se = np.full(p + 2, np.nan)
    zq = norm.ppf(0.5 + config.ci_level / 2)
    ci = (tau_hat - zq * s_tau, tau_hat + zq * s_tau)
    resid = dataset.y - predict(params, dataset.x, dataset.z)
    if warn and not converged:
        warnings.warn(
            f"{engine.name} bent-line fit did not converge in {config.max_iter} iterations",
            ConvergenceWarning,
            stacklevel=3,
        )
    return result_cls(
        params=params,
        eta_final=eta,
        covariance=cov,
        se_tau=s_tau,
        ci_tau=ci,
        scale_c_phi=lin.scale,
        iterations=iterations,
        converged=converged,
        residuals=resid,
        se=np.append(se, s_tau),
        ci_level=config.ci_level,
        objective=engine.objective(resid),
        method=engine.name,
        x_names=dataset.x_names,
    )


def fit_bent_line(dataset: Dataset, config: FitConfig | None = None,
                  score: ScoreFunction | str = WILCOXON) -> BentLineFit:
    """Rank-based bent line fit with Wald inference for all parameters.

    Raises
    ------
    IdentifiabilityError
        If the slope change vanishes or a side of the change point runs out of
        observations. A fit that hits ``max_iter`` is returned with
        ``converged=False`` and a :class:`ConvergenceWarning`.
    """
    return fit_iterative(dataset, config or FitConfig(), RankEngine(score))


def _fitter(method: str):
    if method == "rank":
        return fit_bent_line
    if method == "ls":
        from .baseline import fit_ls_bent_line

        return fit_ls_bent_line
    raise ValueError(f"unknown method {method!r}")


def kfold_fold_errors(dataset: Dataset, k: int, config: FitConfig | None = None,
                      seed: int = 0, method: str = "rank") -> NDArray[np.floating[Any]]:
    """Out-of-fold sums of squared prediction errors, one entry per fold.

    Folds come from a seeded shuffle split into ``k`` near-equal groups.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    n = dataset.n
    if k > n:
        raise DataError(f"cannot split {n} observations into {k} folds")
    fit = _fitter(method)
    config = config or FitConfig()
    perm = np.random.default_rng(seed).permutation(n)
    errors = []
    for fold in np.array_split(perm, k):
        train = np.setdiff1d(perm, fold)
        if train.size < dataset.p + 4:
            raise DataError(f"training set of {train.size} rows is too small to fit")
        fitted = fit(dataset.subset(np.sort(train)), config)
        pred = predict(fitted.params, dataset.x[fold], dataset.z[fold])
        errors.append(float(np.sum((dataset.y[fold] - pred) ** 2)))
    return np.array(errors)


def kfold_prediction_error(dataset: Dataset, k: int, config: FitConfig | None = None,
                           seed: int = 0, method: str = "rank") -> float:
    """Total K-fold cross-validated squared prediction error."""
    return float(kfold_fold_errors(dataset, k, config, seed, method).sum())


__all__ = [
    "FitConfig",
    "RankEngine",
    "fit_bent_line",
    "fit_iterative",
    "initial_tau",
    "kfold_fold_errors",
    "kfold_prediction_error",
    "linearized_design",
    "profile_objective",
    "se_tau",
]
