"""Core data types for bent line regression.

The model relating a response ``y`` to linear covariates ``x`` and a threshold
covariate ``z`` is

    y = alpha' x + beta * z + gamma * (z - tau)_+ + e

where ``(u)_+ = max(u, 0)``. ``x`` never carries an implicit intercept; add a
column of ones when one is wanted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


class BentRankError(ValueError):
    """Base class for errors raised by this package."""

    code = "error"


class DataError(BentRankError):
    """Input data violate a structural requirement."""

    code = "data_error"


class RankDeficientError(BentRankError):
    """A design matrix does not have full column rank."""

    code = "rank_deficient"


class IdentifiabilityError(BentRankError):
    """The change point cannot be identified from the data.

    Raised when the slope difference collapses to zero or when one side of the
    working change point holds too few observations. Run the change-point
    existence test before fitting.
    """

    code = "unidentified"


class NumericalError(BentRankError):
    """A computed quantity is numerically degenerate (e.g. a negative variance)."""

    code = "numerical"


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped at its iteration budget."""


def _readonly(a: NDArray[np.floating[Any]]) -> NDArray[np.floating[Any]]:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` (n,), linear covariates ``x`` (n, p) and threshold covariate ``z`` (n,)."""

    y: NDArray[np.floating[Any]]
    x: NDArray[np.floating[Any]]
    z: NDArray[np.floating[Any]]
    x_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx: ArrayLike) -> Dataset:
        """Rows ``idx`` as a new dataset (re-validated)."""
        idx = np.asarray(idx)
        return validate_dataset(self.y[idx], self.x[idx], self.z[idx], x_names=self.x_names)

    def replace(self, **changes: Any) -> Dataset:
        y = changes.get("y", self.y)
        x = changes.get("x", self.x)
        z = changes.get("z", self.z)
        return validate_dataset(y, x, z, x_names=changes.get("x_names", self.x_names))


def validate_dataset(
    y: ArrayLike,
    x: ArrayLike | None,
    z: ArrayLike,
    *,
    x_names: tuple[str, ...] | list[str] = (),
) -> Dataset:
    """Check shapes and values and build an immutable :class:`Dataset`.

    Parameters
    ----------
    y : array_like, shape (n,)
        Responses.
    x : array_like, shape (n, p) or (n,), or None
        Linear covariates. ``None`` or a zero-width array means p = 0.
    z : array_like, shape (n,)
        Threshold covariate; needs at least three distinct values.

    Raises
    ------
    DataError
        On length mismatch, non-finite entries or a degenerate ``z``.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if y.ndim != 1 or z.ndim != 1:
        raise DataError("y and z must be one-dimensional")
    n = y.shape[0]
    if x is None:
        x = np.empty((n, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError("x must be a two-dimensional (n, p) array")
    if n < 1:
        raise DataError("dataset is empty")
    if z.shape[0] != n or x.shape[0] != n:
        raise DataError(
            f"length mismatch: y has {n} rows, x has {x.shape[0]}, z has {z.shape[0]}"
        )
    for name, arr in (("y", y), ("x", x), ("z", z)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{name} contains non-finite values")
    if np.unique(z).size < 3:
        raise DataError("z needs at least 3 distinct values for an interior change point")
    names = tuple(x_names) if x_names else tuple(f"x{k}" for k in range(x.shape[1]))
    if len(names) != x.shape[1]:
        raise DataError("x_names does not match the number of columns of x")
    return Dataset(_readonly(y), _readonly(x), _readonly(z), names)


@dataclass(frozen=True)
class BentLineParams:
    """Coefficients of a bent line: ``alpha`` on x, ``beta`` on z, ``gamma`` on (z - tau)_+.

    ``offset`` is a location term added to every prediction. It is only
    non-zero for rank fits on designs without a constant column, where the
    residual median would otherwise be lost.
    """

    alpha: NDArray[np.floating[Any]]
    beta: float
    gamma: float
    tau: float
    offset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", _readonly(np.atleast_1d(self.alpha)))
        for name in ("beta", "gamma", "tau", "offset"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def as_vector(self) -> NDArray[np.floating[Any]]:
        """``(alpha..., beta, gamma, tau)``."""
        return np.concatenate([self.alpha, [self.beta, self.gamma, self.tau]])


def predict(params: BentLineParams, x_row: ArrayLike, z_value: ArrayLike) -> Any:
    """Evaluate the bent line at covariates ``x_row`` and threshold value ``z_value``.

    Works row-wise too: ``x_row`` of shape (m, p) with ``z_value`` of shape (m,).
    """
    x_row = np.asarray(x_row, dtype=float)
    z_value = np.asarray(z_value, dtype=float)
    if x_row.shape[-1:] != params.alpha.shape and not (x_row.size == 0 and params.alpha.size == 0):
        raise DataError(
            f"x_row has {x_row.shape[-1] if x_row.ndim else 0} entries, alpha has {params.alpha.size}"
        )
    lin = x_row @ params.alpha if params.alpha.size else np.zeros(z_value.shape)
    out = (
        lin
        + params.beta * z_value
        + params.gamma * np.maximum(z_value - params.tau, 0.0)
        + params.offset
    )
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BentLineFit:
    """A fitted bent line with Wald inference.

    ``covariance`` is ordered ``(alpha..., beta, gamma, eta)``; ``eta`` is the
    nuisance coefficient of the last linearized fit and is ~0 at convergence.
    ``se`` holds standard errors for ``(alpha..., beta, gamma, tau)``.
    """

    params: BentLineParams
    eta_final: float
    covariance: NDArray[np.floating[Any]]
    se_tau: float
    ci_tau: tuple[float, float]
    scale_c_phi: float
    iterations: int
    converged: bool
    residuals: NDArray[np.floating[Any]]
    se: NDArray[np.floating[Any]] = field(default_factory=lambda: np.empty(0))
    ci_level: float = 0.95
    objective: float = float("nan")
    method: str = "rank"
    x_names: tuple[str, ...] = ()

    def param_table(self) -> list[dict[str, float | str]]:
        """One row per parameter: name, estimate, SE and Wald CI."""
        from scipy.stats import norm

        zq = norm.ppf(0.5 + self.ci_level / 2)
        names = [*self.x_names, "beta", "gamma", "tau"]
        est = self.params.as_vector()
        rows = []
        for k, (name, e, s) in enumerate(zip(names, est, self.se)):
            lo, hi = (self.ci_tau if k == len(names) - 1 else (e - zq * s, e + zq * s))
            rows.append(
                {"method": self.method, "parameter": name, "estimate": float(e),
                 "se": float(s), "ci_lower": float(lo), "ci_upper": float(hi)}
            )
        return rows


class LsFit(BentLineFit):
    """Least-squares counterpart of :class:`BentLineFit` (same fields)."""


@dataclass(frozen=True)
class NullFit:
    """Rank fit of y on W = (x, z) with no change point, plus bootstrap ingredients."""

    xi: NDArray[np.floating[Any]]
    residuals: NDArray[np.floating[Any]]
    ecdf_at_residuals: NDArray[np.floating[Any]]
    density_at_residuals: NDArray[np.floating[Any]]
    s_wn: NDArray[np.floating[Any]]
    c_phi_hat: float
    bandwidth: float = float("nan")
    intercept: float = 0.0


@dataclass(frozen=True)
class CusumTestResult:
    """Outcome of a sup-CUSUM change-point test calibrated by the wild bootstrap."""

    t_n: float
    tau_grid: NDArray[np.floating[Any]]
    r_n_path: NDArray[np.floating[Any]]
    bootstrap_stats: NDArray[np.floating[Any]]
    p_value: float
    nb: int
    bandwidth: float
    seed: int
    method: str = "rank"

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "t_n": self.t_n,
            "p_value": self.p_value,
            "nb": self.nb,
            "bandwidth": self.bandwidth,
            "seed": self.seed,
            "tau_grid": self.tau_grid.tolist(),
            "r_n_path": self.r_n_path.tolist(),
            "bootstrap_stats": self.bootstrap_stats.tolist(),
        }
