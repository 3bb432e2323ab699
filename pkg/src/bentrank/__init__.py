"""Rank-based bent line regression with a change-point test and a least-squares baseline."""

from __future__ import annotations

__version__ = "0.1.0"

from .baseline import LsEngine, fit_ls_bent_line, ls_cusum_test
from .bentfit import (
    FitConfig,
    RankEngine,
    fit_bent_line,
    kfold_fold_errors,
    kfold_prediction_error,
    linearized_design,
    profile_objective,
    se_tau,
)
from .cusum import Kernel, TestConfig, cusum_test, fit_null, rn_process, tau_grid, test_statistic, wild_bootstrap
from .data import (
    BentLineFit,
    BentLineParams,
    BentRankError,
    ConvergenceWarning,
    CusumTestResult,
    DataError,
    Dataset,
    IdentifiabilityError,
    LsFit,
    NullFit,
    NumericalError,
    RankDeficientError,
    predict,
    validate_dataset,
)
from .rank import SIGN, WILCOXON, ScoreFunction, dispersion, estimate_c_phi, fit_rank_linear, ranks
from .simulation import (
    ErrorKind,
    SimReport,
    SimScenario,
    bandwidth_sweep,
    generate,
    run_estimation_study,
    run_test_study,
)

__all__ = [
    "BentLineFit", "BentLineParams", "BentRankError", "ConvergenceWarning", "CusumTestResult",
    "DataError", "Dataset", "ErrorKind", "FitConfig", "IdentifiabilityError", "Kernel", "LsEngine",
    "LsFit", "NullFit", "NumericalError", "RankDeficientError", "RankEngine", "SIGN", "ScoreFunction",
    "SimReport", "SimScenario", "TestConfig", "WILCOXON", "bandwidth_sweep", "cusum_test",
    "dispersion", "estimate_c_phi", "fit_bent_line", "fit_ls_bent_line", "fit_null", "fit_rank_linear",
    "generate", "kfold_fold_errors", "kfold_prediction_error", "linearized_design", "ls_cusum_test",
    "predict", "profile_objective", "ranks", "rn_process", "run_estimation_study", "run_test_study",
    "se_tau", "tau_grid", "test_statistic", "validate_dataset", "wild_bootstrap",
]
