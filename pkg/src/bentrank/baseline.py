"""Least-squares segmented regression and its wild-bootstrap CUSUM test.

The estimator runs the same linearize-and-update iteration as the rank fit
with ordinary least squares in place of the rank fit, so differences between
the two isolate the loss. The test mirrors the rank test with raw residuals in
the observed process and a bootstrap process that carries no residual terms.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

import numpy as np

from .bentfit import FitConfig, LinearFit, fit_iterative
from .cusum import TestConfig, _calibrate, _weights, null_design, tau_grid, test_statistic
from .data import CusumTestResult, Dataset, DataError, LsFit, RankDeficientError

if TYPE_CHECKING:
    from numpy.typing import NDArray


class LsEngine:
    """OLS on the full design; covariance ``s^2 (D'D)^-1`` with ``s^2 = RSS / (n - k)``."""

    name = "ls"

    def objective(self, residuals: NDArray[np.floating[Any]]) -> float:
        return float(residuals @ residuals)

    def fit(self, y, design, start=None, inference=True) -> LinearFit:
        n, k = design.shape
        coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < k:
            raise RankDeficientError(f"design of {k} columns has rank {rank}")
        resid = y - design @ coef
        rss = float(resid @ resid)
        if inference and n > k:
            s2 = rss / (n - k)
            cov = s2 * np.linalg.inv(design.T @ design)
        else:
            s2 = float("nan")
            cov = np.full((k, k), np.nan)
        return LinearFit(coef, cov, rss, float(np.sqrt(s2)))


def fit_ls_bent_line(dataset: Dataset, config: FitConfig | None = None) -> LsFit:
    """Least-squares bent line fit using the shared iteration and safeguards."""
    return fit_iterative(dataset, config or FitConfig(), LsEngine(), LsFit)  # type: ignore[return-value]


def ls_null_residuals(dataset: Dataset) -> NDArray[np.floating[Any]]:
    """Residuals of the OLS fit of y on W = (x, z)."""
    w = null_design(dataset)
    return dataset.y - w @ LsEngine().fit(dataset.y, w, None, False).coef


def ls_bootstrap_summands(dataset: Dataset, grid: NDArray[np.floating[Any]]) -> NDArray[np.floating[Any]]:
    """(n, G) entries ``(z_i - t) I(z_i <= t) - S1(t)' S_wn^-1 W_i``; free of the residuals."""
    n = dataset.n
    w = null_design(dataset)
    wts = _weights(dataset.z, grid)
    s_wn = w.T @ w / n
    if np.linalg.matrix_rank(s_wn) < s_wn.shape[0]:
        raise RankDeficientError("S_wn = W'W / n is singular")
    s1 = w.T @ wts / n
    return wts - w @ np.linalg.solve(s_wn, s1)


def ls_cusum_test(dataset: Dataset, config: TestConfig | None = None,
                  *, u: Any = None) -> CusumTestResult:
    """Sup-CUSUM test built on least-squares residuals.

    The bootstrap process has no residual scale factor, so it is calibrated
    for unit error variance only.
    """
    config = config or TestConfig()
    if dataset.p + 2 > dataset.n:
        raise DataError("too few observations for the null model")
    grid = tau_grid(dataset.z, config.q_lo, config.q_hi)
    resid = ls_null_residuals(dataset)
    path = resid @ _weights(dataset.z, grid) / np.sqrt(dataset.n)
    summands = ls_bootstrap_summands(dataset, grid)
    return _calibrate(test_statistic(path), path, grid, summands, config,
                      float("nan"), "ls", None if u is None else np.asarray(u))


ls_cusum_test.__test__ = False  # type: ignore[attr-defined]

__all__ = ["LsEngine", "fit_ls_bent_line", "ls_bootstrap_summands", "ls_cusum_test", "ls_null_residuals"]
