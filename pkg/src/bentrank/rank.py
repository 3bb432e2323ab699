"""Rank-based (Jaeckel) linear regression without a change point.

The Wilcoxon dispersion of a residual vector is proportional to the sum of
absolute pairwise differences,

    D(e) = sum_i sqrt(12) (R_i / (n + 1) - 1/2) e_i
         = sqrt(12) / (2 (n + 1)) * sum_{i<j} |e_i - e_j|,

so minimizing it over slope coefficients is an L1 regression on pairwise
differences. The solver runs a few iteratively reweighted least-squares steps
to get close, then finishes with exact simplex pivots on the pairwise L1
problem so the returned coefficients sit on an optimal vertex.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from enum import Enum
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.optimize import linprog
from scipy.stats import rankdata

from .data import BentRankError, DataError, RankDeficientError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

SQRT12 = float(np.sqrt(12.0))

# Above this many residual pairs the pairwise arrays get too large for memory,
# and the solver falls back to blocked IRLS.
_MAX_PAIRS = 4_000_000


class ScoreKind(str, Enum):
    WILCOXON = "wilcoxon"
    SIGN = "sign"


@dataclass(frozen=True)
class ScoreFunction:
    """A rank score function phi on (0, 1), standardized to mean 0 and unit L2 norm."""

    kind: ScoreKind

    def evaluate(self, t: ArrayLike) -> NDArray[np.floating[Any]]:
        t = np.asarray(t, dtype=float)
        if self.kind is ScoreKind.WILCOXON:
            return SQRT12 * (t - 0.5)
        return np.sign(t - 0.5)

    __call__ = evaluate


WILCOXON = ScoreFunction(ScoreKind.WILCOXON)
SIGN = ScoreFunction(ScoreKind.SIGN)


def as_score(score: ScoreFunction | str) -> ScoreFunction:
    if isinstance(score, ScoreFunction):
        return score
    return ScoreFunction(ScoreKind(str(score).lower()))


def ranks(values: ArrayLike, atol: float = 0.0) -> NDArray[np.floating[Any]]:
    """Ranks 1..n with ties replaced by their average (midranks).

    With ``atol > 0``, sorted neighbours closer than ``atol`` count as tied,
    which keeps exact ties found by the solver stable under rounding.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise DataError("cannot rank an empty vector")
    if not np.all(np.isfinite(values)):
        raise DataError("cannot rank non-finite values")
    if atol <= 0.0:
        return rankdata(values, method="average")
    order = np.argsort(values, kind="stable")
    group = np.concatenate([[0], np.cumsum(np.diff(values[order]) > atol)])
    return rankdata(group, method="average")[np.argsort(order, kind="stable")]


def dispersion(residuals: ArrayLike, score: ScoreFunction | str = WILCOXON) -> float:
    """Jaeckel's dispersion ``sum_i phi(R_i / (n + 1)) e_i``."""
    e = np.asarray(residuals, dtype=float)
    if e.size < 2:
        raise DataError("dispersion needs at least two residuals")
    score = as_score(score)
    a = score(ranks(e) / (e.size + 1))
    return float(a @ e)


@dataclass(frozen=True)
class RankLinearFit:
    """Result of :func:`fit_rank_linear`.

    ``residuals`` are ``y - w @ coefficients`` (no intercept), so their ranks
    are unaffected by location. ``covariance`` is for the slopes; the
    intercept variance and its covariance with the slopes are kept separately.
    """

    coefficients: NDArray[np.floating[Any]]
    intercept: float
    residuals: NDArray[np.floating[Any]]
    covariance: NDArray[np.floating[Any]]
    c_phi_hat: float
    dispersion_value: float
    tau_s_hat: float = float("nan")
    intercept_var: float = float("nan")
    intercept_cov: NDArray[np.floating[Any]] | None = None
    pivots: int = 0


# ---------------------------------------------------------------------------
# scale estimates


def silverman_bandwidth(residuals: ArrayLike, mult: float = 1.06, robust: bool = False) -> float:
    """``mult * s * n**(-1/5)``.

    ``s`` is the sample standard deviation, or with ``robust=True`` the smaller
    of it and ``IQR / 1.349`` (equal for normal data, resistant to outliers).
    """
    e = np.asarray(residuals, dtype=float)
    s = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    if robust and e.size > 1:
        q75, q25 = np.percentile(e, [75, 25])
        if q75 > q25:
            s = min(s, float(q75 - q25) / 1.349)
    return mult * s * e.size ** (-0.2)


def _gaussian_pair_mean(e: NDArray[np.floating[Any]], b: float, block: int = 1024) -> float:
    # mean over pairs i != j of N(e_i - e_j; 0, b^2), an estimate of int f^2
    n = e.size
    total = 0.0
    for start in range(0, n, block):
        d = (e[start:start + block, None] - e[None, :]) / b
        total += np.exp(-0.5 * d * d).sum()
    total -= n  # drop the i == j terms
    return total / (n * (n - 1) * b * np.sqrt(2.0 * np.pi))


def _gaussian_kde_at(e: NDArray[np.floating[Any]], at: float, h: float) -> float:
    u = (at - e) / h
    return float(np.exp(-0.5 * u * u).sum() / (e.size * h * np.sqrt(2.0 * np.pi)))


def estimate_c_phi(
    residuals: ArrayLike,
    score: ScoreFunction | str = WILCOXON,
    bandwidth: float | None = None,
) -> float:
    """Plug-in estimate of the rank scale parameter ``c_phi``.

    Wilcoxon: ``1 / (sqrt(12) * I)`` where ``I`` estimates ``int f(u)^2 du``
    by the mean of a Gaussian kernel over residual pairs ``i != j``; its
    default bandwidth ``1.06 s n^(-2/5)`` has the rate suited to this
    functional and keeps the smoothing bias small. Sign: ``1 / (2 fhat(median))``
    with a Gaussian kernel density estimate at Silverman's ``1.06 s n^(-1/5)``.
    Here ``s = min(sd, IQR / 1.349)`` resists outliers.
    """
    e = np.asarray(residuals, dtype=float)
    if e.size < 10:
        raise DataError("c_phi estimation needs at least 10 residuals")
    if not np.all(np.isfinite(e)):
        raise DataError("residuals contain non-finite values")
    if np.ptp(e) == 0.0:
        raise DataError("residuals are all equal; the density is degenerate")
    score = as_score(score)
    h = silverman_bandwidth(e, robust=True) if bandwidth is None else float(bandwidth)
    if bandwidth is None and score.kind is ScoreKind.WILCOXON:
        h *= e.size ** (-0.2)
    if not h > 0:
        raise DataError("bandwidth must be positive")
    if score.kind is ScoreKind.WILCOXON:
        return 1.0 / (SQRT12 * _gaussian_pair_mean(e, h))
    return 1.0 / (2.0 * _gaussian_kde_at(e, float(np.median(e)), h))


def estimate_tau_s(residuals: ArrayLike, bandwidth: float | None = None) -> float:
    """Scale of the median-based intercept, ``1 / (2 fhat(median))``."""
    e = np.asarray(residuals, dtype=float)
    if np.ptp(e) == 0.0:
        return 0.0
    h = silverman_bandwidth(e, robust=True) if bandwidth is None else float(bandwidth)
    return 1.0 / (2.0 * _gaussian_kde_at(e, float(np.median(e)), h))


# ---------------------------------------------------------------------------
# Wilcoxon solver


def _irls(
    y: NDArray[np.floating[Any]],
    w: NDArray[np.floating[Any]],
    b: NDArray[np.floating[Any]],
    max_iter: int,
    tol: float = 1e-8,
    eps: float = 1e-8,
    block: int = 2048,
) -> NDArray[np.floating[Any]]:
    """IRLS on sum_{i<j} |e_i - e_j| with weights 1 / max(|e_i - e_j|, eps).

    The weighted normal equations use the graph-Laplacian identity
    sum_{i<j} c_ij (w_i - w_j)(w_i - w_j)' = W' (diag(C 1) - C) W, assembled in
    row blocks so memory stays O(block * n).
    """
    n = y.size
    for _ in range(max_iter):
        e = y - w @ b
        lhs = np.zeros((w.shape[1], w.shape[1]))
        rhs = np.zeros(w.shape[1])
        for start in range(0, n, block):
            stop = min(start + block, n)
            c = 1.0 / np.maximum(np.abs(e[start:stop, None] - e[None, :]), eps)
            c[np.arange(stop - start), np.arange(start, stop)] = 0.0
            deg = c.sum(axis=1)
            wb = w[start:stop]
            lw = deg[:, None] * wb - c @ w
            ly = deg * y[start:stop] - c @ y
            lhs += wb.T @ lw
            rhs += wb.T @ ly
        try:
            b_new = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(b_new)):
            break
        done = np.max(np.abs(b_new - b)) < tol
        b = b_new
        if done:
            break
    return b


def _crash_basis(
    dmat: NDArray[np.floating[Any]], res: NDArray[np.floating[Any]], q: int
) -> list[int] | None:
    """Pick q linearly independent pairs with the smallest absolute residuals."""
    m = res.size
    absr = np.abs(res)
    k = min(m, max(8 * q, 64))
    while True:
        cand = np.argpartition(absr, k - 1)[:k] if k < m else np.arange(m)
        cand = cand[np.argsort(absr[cand], kind="stable")]
        basis: list[int] = []
        qmat = np.zeros((0, q))
        for idx in cand:
            row = dmat[idx]
            nrm = np.linalg.norm(row)
            if nrm == 0.0:
                continue
            resid = row - qmat.T @ (qmat @ row)
            rn = np.linalg.norm(resid)
            if rn > 1e-8 * nrm:
                basis.append(int(idx))
                qmat = np.vstack([qmat, resid / rn])
                if len(basis) == q:
                    return basis
        if k == m:
            return None
        k = min(m, 4 * k)


@lru_cache(maxsize=8)
def _pair_index(n: int) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
    return np.triu_indices(n, 1)


def _pair_jitter(i: NDArray[np.intp], j: NDArray[np.intp], n: int) -> NDArray[np.floating[Any]]:
    """Deterministic pseudo-random value in [-1, 1) for each pair (splitmix64 of its index)."""
    x = (np.minimum(i, j).astype(np.uint64) * np.uint64(n) + np.maximum(i, j).astype(np.uint64))
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    return (x >> np.uint64(11)).astype(float) * (2.0 / 2.0**53) - 1.0


def _count_within(es: NDArray[np.floating[Any]], delta: float) -> int:
    hi = np.searchsorted(es, es + delta, side="right")
    return int((hi - np.arange(es.size) - 1).sum())


def _near_pairs(e: NDArray[np.floating[Any]], k: int) -> tuple[NDArray[np.intp], NDArray[np.intp], float]:
    """About ``k`` pairs with the smallest ``|e_i - e_j|``, all pairs closer than the returned cutoff."""
    n = e.size
    order = np.argsort(e, kind="stable")
    es = e[order]
    lo, hi = 0.0, float(es[-1] - es[0])
    if _count_within(es, lo) > k:
        delta = lo
    else:
        # any cutoff holding between k/2 and k pairs will do
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            c = _count_within(es, mid)
            if c <= k:
                lo = mid
                if 2 * c >= k:
                    break
            else:
                hi = mid
            if hi - lo <= 1e-12 * (1.0 + hi):
                break
        delta = lo
    top = np.searchsorted(es, es + delta, side="right")
    counts = top - np.arange(n) - 1
    a = np.repeat(np.arange(n), counts)
    offs = np.arange(a.size) - np.repeat(np.cumsum(counts) - counts, counts)
    return order[a], order[a + 1 + offs], delta


def _simplex_finish(
    dmat: NDArray[np.floating[Any]],
    r: NDArray[np.floating[Any]],
    b: NDArray[np.floating[Any]],
    jitter: NDArray[np.floating[Any]],
    g_far: NDArray[np.floating[Any]] | None = None,
    max_pivots: int = 1000,
) -> tuple[NDArray[np.floating[Any]], int, bool]:
    """Exact edge-descent (simplex) on ``min_b sum_k |r_k - dmat_k b| - g_far' b``.

    The linear term carries pairs whose sign is held fixed. Starting from the
    vertex nearest ``b``, repeatedly drop the basic pair whose multiplier
    violates |lambda| <= 1 and line-search along the edge (a weighted median of
    the pairwise breakpoints). Returns the coefficients, the pivot count and
    whether optimality was certified (False when the linear term makes the
    problem unbounded, on stalls, or on numerical trouble).
    """
    m, q = dmat.shape
    g = np.zeros(q) if g_far is None else g_far
    r_orig = r

    def objective(rr, bb):
        return float(np.abs(rr - dmat @ bb).sum()) - float(g @ bb)

    f_start = objective(r, b)
    # An independent tiny perturbation of every pair breaks the structural
    # degeneracy of tied residual triples (r_ik = r_ij + r_jk) that makes plain
    # pivoting cycle. The final basis is re-solved on the original data.
    scale = 1.0 + float(np.max(np.abs(r)))
    r = r + (1e-9 * scale) * jitter
    basis = _crash_basis(dmat, r - dmat @ b, q)
    if basis is None:
        return b, 0, False
    try:
        minv = np.linalg.inv(dmat[basis])
    except np.linalg.LinAlgError:
        return b, 0, False
    bv = minv @ r[basis]
    res = r - dmat @ bv
    f = float(np.abs(res).sum()) - float(g @ bv)
    zero_tol = 1e-13 * scale
    pivots = 0
    stall = 0
    optimal = False
    nonbasic = np.ones(m, dtype=bool)
    t = np.empty(m)
    for pivots in range(1, max_pivots + 1):
        nonbasic[:] = True
        nonbasic[basis] = False
        zero = np.abs(res) <= zero_tol
        zero &= nonbasic
        sgn = np.sign(res)
        sgn[basis] = 0.0
        sgn[zero] = 0.0
        lam = minv.T @ (sgn @ dmat + g)
        k = int(np.argmax(np.abs(lam)))
        if abs(lam[k]) <= 1.0 + 1e-9:
            pivots -= 1
            optimal = True
            break
        slope = dmat @ (np.sign(lam[k]) * minv[:, k])
        deriv = 1.0 - abs(lam[k])
        # breakpoint of pair k along the edge: res_k - t slope_k = 0
        t.fill(np.inf)
        np.divide(res, slope, out=t, where=nonbasic & (slope != 0.0))
        t[zero & (slope != 0.0)] = 0.0
        ok = np.flatnonzero(t >= 0.0)
        ok = ok[np.isfinite(t[ok])]
        tt = t[ok]
        inc = np.abs(slope[ok])
        inc[~zero[ok]] *= 2.0
        entering = -1
        # first guess at how many breakpoints the line search must pass
        need = -deriv / float(inc.mean()) if inc.size else 0.0
        kk = min(tt.size, max(32, int(2.0 * need) + 8))
        while kk > 0:
            part = np.argpartition(tt, kk - 1)[:kk] if kk < tt.size else np.arange(tt.size)
            order = part[np.argsort(tt[part], kind="stable")]
            hit = np.flatnonzero(deriv + np.cumsum(inc[order]) >= 0.0)
            if hit.size:
                entering = int(ok[order[hit[0]]])
                break
            if kk == tt.size:
                break
            kk = min(tt.size, 4 * kk)
        if entering < 0:
            break
        new_basis = list(basis)
        new_basis[k] = entering
        try:
            minv_new = np.linalg.inv(dmat[new_basis])
        except np.linalg.LinAlgError:
            break
        b_new = minv_new @ r[new_basis]
        res_new = r - dmat @ b_new
        f_new = float(np.abs(res_new).sum()) - float(g @ b_new)
        if f_new > f + 1e-12 * (1.0 + abs(f)):
            break
        stall = stall + 1 if f_new >= f - 1e-14 * (1.0 + abs(f)) else 0
        if stall > 4 * q + 10:
            break
        basis, bv, f, res, minv = new_basis, b_new, f_new, res_new, minv_new
    try:
        b_final = np.linalg.solve(dmat[basis], r_orig[basis])
    except np.linalg.LinAlgError:
        return b, pivots, False
    if objective(r_orig, b_final) <= f_start + 1e-12 * (1.0 + abs(f_start)):
        return b_final, pivots, optimal
    return b, pivots, False


def _wilcoxon_slopes(
    y: NDArray[np.floating[Any]],
    w: NDArray[np.floating[Any]],
    start: NDArray[np.floating[Any]] | None,
    warm_iter: int,
) -> tuple[NDArray[np.floating[Any]], int]:
    """Exact Wilcoxon slopes by simplex on an active set of nearly tied pairs.

    Pairs whose residual difference exceeds a cutoff keep their sign near the
    optimum, so they enter only through the constant gradient
    ``sum_far sgn(e_i - e_j)(w_i - w_j)``, obtained from midranks as
    ``sum_i (2 R_i - n - 1) w_i`` minus the near-pair part. The solution is
    exact when no far pair changes sign, i.e. when ``ptp(w @ step)`` stays below
    the cutoff; otherwise the active set grows and the solve repeats.
    """
    n, q = w.shape
    if start is None:
        wc = w - w.mean(axis=0)
        b = np.linalg.lstsq(wc, y - y.mean(), rcond=None)[0]
        b = _irls(y, w, b, warm_iter)
    else:
        b = np.asarray(start, dtype=float).copy()
    m = n * (n - 1) // 2
    k = min(m, max(4 * n, 400 * q))
    total = 0
    while True:
        e = y - w @ b
        if k >= m:
            if m > _MAX_PAIRS:
                return _irls(y, w, b, 200), total
            i, j = _pair_index(n)
            delta = np.inf
        else:
            i, j, delta = _near_pairs(e, k)
        dmat = w[i] - w[j]
        r = y[i] - y[j]
        g_far = None
        if k < m:
            g_all = (2.0 * rankdata(e) - n - 1.0) @ w
            # signs from e itself so exact ties agree with the midranks
            g_far = g_all - np.sign(e[i] - e[j]) @ dmat
        b_new, pivots, ok = _simplex_finish(dmat, r, b, _pair_jitter(i, j, n), g_far)
        total += pivots
        reach = float(np.ptp(w @ (b_new - b)))
        if k >= m or (ok and reach < delta):
            return b_new, total
        if ok and dispersion(y - w @ b_new) < dispersion(e):
            # progress: re-centre the active set on the better point
            b = b_new
        else:
            k = min(m, 4 * k)


def _sign_slopes(y: NDArray[np.floating[Any]], w: NDArray[np.floating[Any]]) -> NDArray[np.floating[Any]]:
    # Sign-score dispersion is L1 regression with a free intercept; solve its dual LP.
    n, q = w.shape
    design = np.column_stack([np.ones(n), w])
    res = linprog(-y, A_eq=design.T, b_eq=np.zeros(q + 1), bounds=(-1.0, 1.0), method="highs")
    if res.status != 0:
        raise BentRankError(f"sign-score fit failed: {res.message}")
    return -np.asarray(res.eqlin.marginals)[1:]


def _check_design(w: NDArray[np.floating[Any]]) -> None:
    if w.shape[1] == 0:
        return
    const = np.ptp(w, axis=0) == 0.0
    if np.any(const):
        raise RankDeficientError(
            "w contains a constant column; the intercept is estimated separately"
        )
    wc = w - w.mean(axis=0)
    if np.linalg.matrix_rank(wc) < w.shape[1]:
        raise RankDeficientError("w does not have full column rank")


def fit_rank_linear(
    y: ArrayLike,
    w: ArrayLike,
    score: ScoreFunction | str = WILCOXON,
    *,
    start: ArrayLike | None = None,
    bandwidth: float | None = None,
    warm_iter: int = 12,
    inference: bool = True,
) -> RankLinearFit:
    """Minimize the rank dispersion of ``y - w @ b`` over ``b``.

    Parameters
    ----------
    y : array_like, shape (n,)
    w : array_like, shape (n, q)
        Design without a constant column.
    score : ScoreFunction or {"wilcoxon", "sign"}
    start : array_like, optional
        Starting coefficients. Skips the least-squares/IRLS warm-up.
    bandwidth : float, optional
        Bandwidth for the ``c_phi`` density functional (Silverman by default).
    inference : bool
        When False, skip ``c_phi`` and the covariance (they are set to NaN).

    Returns
    -------
    RankLinearFit
        Intercept is the median of ``y - w @ b``; covariance of the slopes is
        ``c_phi^2 (wc' wc)^{-1}`` with ``wc`` the column-centered design.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n, q = w.shape
    if y.shape != (n,):
        raise DataError("y and w have different numbers of rows")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise DataError("non-finite values in y or w")
    if q >= n:
        raise RankDeficientError(f"need q < n, got q={q}, n={n}")
    _check_design(w)
    score = as_score(score)

    pivots = 0
    if q == 0:
        b = np.empty(0)
    elif score.kind is ScoreKind.WILCOXON:
        b, pivots = _wilcoxon_slopes(y, w, None if start is None else np.asarray(start, float), warm_iter)
    else:
        b = _sign_slopes(y, w)
    e = y - w @ b
    intercept = float(np.median(e))
    disp = dispersion(e, score)

    if not inference or n < 10:
        return RankLinearFit(b, intercept, e, np.full((q, q), np.nan), float("nan"), disp,
                             pivots=pivots)
    if np.ptp(e) == 0.0:
        # exact fit: zero residual scale
        return RankLinearFit(b, intercept, e, np.zeros((q, q)), 0.0, disp, 0.0, 0.0,
                             np.zeros(q), pivots)
    c_phi = estimate_c_phi(e, score, bandwidth)
    tau_s = estimate_tau_s(e - intercept, bandwidth)
    wbar = w.mean(axis=0)
    wc = w - wbar
    cov = c_phi**2 * np.linalg.inv(wc.T @ wc)
    cov = 0.5 * (cov + cov.T)
    icov = -(cov @ wbar)
    ivar = tau_s**2 / n + float(wbar @ cov @ wbar)
    return RankLinearFit(b, intercept, e, cov, c_phi, disp, tau_s, ivar, icov, pivots)
