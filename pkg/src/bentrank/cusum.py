"""Sup-CUSUM test for the existence of a change point, with wild-bootstrap calibration.

Only the no-change-point model is fitted. The process

    R_n(t) = n^{-1/2} sum_i sqrt(12) (R_i / (n + 1) - 1/2) (z_i - t) I(z_i <= t)

accumulates rank scores of the null residuals below each candidate ``t``; the
statistic is ``T_n = max_t |R_n(t)|`` over a grid of observed z values. The null
distribution is approximated by multiplying each summand of the linear
representation of ``R_n`` by an independent draw ``u_i = v_i w_i`` with
``v_i ~ N(0, 1)`` and ``w_i`` a Rademacher sign.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable

import numpy as np

from .bentfit import RankEngine
from .data import CusumTestResult, Dataset, DataError, NullFit, RankDeficientError
from .rank import SQRT12, estimate_c_phi, ranks, silverman_bandwidth

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


class Kernel(str, Enum):
    EPANECHNIKOV = "epanechnikov"
    GAUSSIAN = "gaussian"


def kernel_function(kind: Kernel | str) -> Callable[[NDArray[np.floating[Any]]], NDArray[np.floating[Any]]]:
    kind = Kernel(kind)
    if kind is Kernel.EPANECHNIKOV:
        return lambda u: np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    return lambda u: np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class TestConfig:
    """Bootstrap size, kernel density settings and the change-point grid.

    The grid holds every distinct z value between the ``q_lo`` and ``q_hi``
    sample quantiles. Density bandwidth is ``bandwidth_mult * sd(e) * n^(-1/5)``.
    """

    __test__ = False  # keep pytest from collecting this class

    nb: int = 1000
    bandwidth_mult: float = 1.06
    kernel: Kernel | str = Kernel.EPANECHNIKOV
    q_lo: float = 0.1
    q_hi: float = 0.9
    seed: int = 0
    level: float = 0.05

    def __post_init__(self) -> None:
        if self.nb < 1:
            raise ValueError("nb must be at least 1")
        if not 0 < self.q_lo < self.q_hi < 1:
            raise ValueError("need 0 < q_lo < q_hi < 1")
        if not self.bandwidth_mult > 0:
            raise ValueError("bandwidth_mult must be positive")
        object.__setattr__(self, "kernel", Kernel(self.kernel))


def tau_grid(z: ArrayLike, q_lo: float = 0.1, q_hi: float = 0.9) -> NDArray[np.floating[Any]]:
    """Distinct observed z values between the ``q_lo`` and ``q_hi`` quantiles."""
    z = np.asarray(z, dtype=float)
    lo, hi = np.quantile(z, [q_lo, q_hi])
    u = np.unique(z)
    grid = u[(u >= lo) & (u <= hi)]
    if grid.size == 0:
        raise DataError("change-point grid is empty")
    return grid


def null_design(dataset: Dataset) -> NDArray[np.floating[Any]]:
    """W = (x, z)."""
    return np.column_stack([dataset.x, dataset.z])


def kernel_density_at(residuals: ArrayLike, bandwidth: float,
                      kernel: Kernel | str = Kernel.EPANECHNIKOV) -> NDArray[np.floating[Any]]:
    """Leave-in kernel density estimate ``n^-1 sum_j K_h(e_i - e_j)`` at every residual."""
    e = np.asarray(residuals, dtype=float)
    k = kernel_function(kernel)
    out = np.empty(e.size)
    block = 1024
    for start in range(0, e.size, block):
        u = (e[start:start + block, None] - e[None, :]) / bandwidth
        out[start:start + block] = k(u).sum(axis=1)
    return out / (e.size * bandwidth)


def fit_null(dataset: Dataset, bandwidth_mult: float = 1.06,
             kernel: Kernel | str = Kernel.EPANECHNIKOV) -> NullFit:
    """Rank fit of y on W = (x, z) with the ingredients the bootstrap needs.

    Residuals are taken from the full fit, median intercept included. The
    empirical CDF at the residuals is ``rank / (n + 1)``, with residuals that
    agree to rounding error counted as tied; ``c_phi`` uses the default
    Gaussian plug-in, the residual densities use ``kernel`` with a Silverman-type
    bandwidth scaled by ``bandwidth_mult``.
    """
    w = null_design(dataset)
    n = dataset.n
    if w.shape[1] + 1 > n:
        raise RankDeficientError("too few observations for the null model")
    lf = RankEngine().fit(dataset.y, w, None, False)
    offset = lf.offset
    const = np.flatnonzero((np.ptp(w, axis=0) == 0.0) & (w[0] != 0.0))
    intercept = float(lf.coef[const[0]] * w[0, const[0]]) if const.size else offset
    resid = dataset.y - w @ lf.coef - offset
    s_wn = (w.T @ w) / n
    if np.linalg.matrix_rank(s_wn) < s_wn.shape[0]:
        raise RankDeficientError("S_wn = W'W / n is singular")
    h = silverman_bandwidth(resid, bandwidth_mult)
    if not h > 0:
        h = np.finfo(float).eps
    atol = 1e-10 * (1.0 + float(np.max(np.abs(dataset.y))))
    ecdf = ranks(resid, atol) / (n + 1)
    dens = kernel_density_at(resid, h, kernel)
    try:
        c_phi = estimate_c_phi(resid)
    except DataError:
        c_phi = 0.0
    return NullFit(
        xi=lf.coef,
        residuals=resid,
        ecdf_at_residuals=ecdf,
        density_at_residuals=dens,
        s_wn=s_wn,
        c_phi_hat=c_phi,
        bandwidth=h,
        intercept=intercept,
    )


def _weights(z: NDArray[np.floating[Any]], grid: NDArray[np.floating[Any]]) -> NDArray[np.floating[Any]]:
    # (z_i - t) I(z_i <= t), shape (n, G)
    diff = z[:, None] - grid[None, :]
    return np.where(diff <= 0.0, diff, 0.0)


def rn_process(null_fit: NullFit, dataset: Dataset, tau_grid: ArrayLike) -> NDArray[np.floating[Any]]:
    """``R_n(t)`` at each grid point, using the ranks stored in ``null_fit``."""
    grid = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    if grid.size == 0:
        raise DataError("tau grid is empty")
    z = dataset.z
    if grid.min() < z.min() or grid.max() > z.max():
        raise DataError("tau grid must lie within [min z, max z]")
    n = dataset.n
    score = SQRT12 * (np.asarray(null_fit.ecdf_at_residuals) - 0.5)
    return score @ _weights(z, grid) / np.sqrt(n)


def test_statistic(r_n_path: ArrayLike) -> float:
    """``max |R_n(t)|`` over the grid."""
    path = np.asarray(r_n_path, dtype=float)
    if path.size == 0:
        raise DataError("empty process path")
    return float(np.max(np.abs(path)))


test_statistic.__test__ = False  # type: ignore[attr-defined]


def multipliers(seed: int, nb: int, n: int) -> NDArray[np.floating[Any]]:
    """(nb, n) wild-bootstrap multipliers ``u = v * w``.

    Replicate ``j`` draws from its own stream seeded by ``(seed, j)`` so any
    subset of replicates can be regenerated independently of the others.
    """
    out = np.empty((nb, n))
    for j in range(nb):
        rng = np.random.default_rng([seed, j])
        v = rng.standard_normal(n)
        w = 2.0 * rng.integers(0, 2, size=n) - 1.0
        out[j] = v * w
    return out


def bootstrap_summands(null_fit: NullFit, dataset: Dataset,
                       grid: NDArray[np.floating[Any]]) -> NDArray[np.floating[Any]]:
    """(n, G) summands multiplied by ``u_i`` in the bootstrap process.

    Entry (i, t) is ``sqrt(12) (F_n(e_i) - 1/2) [(z_i - t) I(z_i <= t) - c_phi S_1n(t)' S_wn^{-1} W_i]``.
    """
    n = dataset.n
    w = null_design(dataset)
    wts = _weights(dataset.z, grid)
    s1 = (SQRT12 * null_fit.density_at_residuals[:, None] * w).T @ wts / n  # (q, G)
    proj = w @ np.linalg.solve(null_fit.s_wn, s1)  # (n, G)
    a = SQRT12 * (null_fit.ecdf_at_residuals - 0.5)
    return a[:, None] * (wts - null_fit.c_phi_hat * proj)


def _calibrate(t_n: float, path: NDArray[np.floating[Any]], grid: NDArray[np.floating[Any]],
               summands: NDArray[np.floating[Any]], config: TestConfig, bandwidth: float,
               method: str, u: NDArray[np.floating[Any]] | None) -> CusumTestResult:
    n = summands.shape[0]
    if u is None:
        u = multipliers(config.seed, config.nb, n)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != n:
        raise DataError("multiplier matrix must have one column per observation")
    stats = np.max(np.abs(u @ summands), axis=1) / np.sqrt(n)
    p_value = float(np.mean(stats >= t_n))
    return CusumTestResult(
        t_n=t_n,
        tau_grid=grid,
        r_n_path=path,
        bootstrap_stats=stats,
        p_value=p_value,
        nb=u.shape[0],
        bandwidth=bandwidth,
        seed=config.seed,
        method=method,
    )


def wild_bootstrap(null_fit: NullFit, dataset: Dataset, config: TestConfig | None = None,
                   *, u: ArrayLike | None = None) -> CusumTestResult:
    """Bootstrap p-value for ``T_n``.

    Parameters
    ----------
    u : array_like, shape (nb, n), optional
        Explicit multipliers replacing the seeded draws.
    """
    config = config or TestConfig()
    grid = tau_grid(dataset.z, config.q_lo, config.q_hi)
    path = rn_process(null_fit, dataset, grid)
    summands = bootstrap_summands(null_fit, dataset, grid)
    return _calibrate(test_statistic(path), path, grid, summands, config,
                      null_fit.bandwidth, "rank", None if u is None else np.asarray(u))


def cusum_test(dataset: Dataset, config: TestConfig | None = None) -> CusumTestResult:
    """Fit the null model and run the wild-bootstrap sup-CUSUM test."""
    config = config or TestConfig()
    null_fit = fit_null(dataset, config.bandwidth_mult, config.kernel)
    return wild_bootstrap(null_fit, dataset, config)


cusum_test.__test__ = False  # type: ignore[attr-defined]
