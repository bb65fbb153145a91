"""stabreg: estimation-stability model selection for the Lasso and
limiting-risk analysis of M-estimators in the proportional p/n regime."""

from .datasets import (
    Dataset,
    FoldPlan,
    SimConfig,
    generate_linear,
    load_csv,
    make_folds,
    save_csv,
    standardize,
)
from .distributions import DoubleExponentialErrors, GaussianErrors, make_error_dist
from .lasso_path import LassoPath, fit_path, interpolate_at_tau, lambda_max, lasso_fit
from .m_estimators import FitResult, LossSpec, fit_lad, fit_m, fit_ols
from .montecarlo import MCSummary, compare_theory_mc, direction_uniformity_check, run_norm_mc
from .regime import (
    ProxSpec,
    RegimeSolution,
    find_crossover,
    r_curve,
    solve_system,
    zhat_expectation,
)
from .stability import (
    SelectionResult,
    StabilityCurve,
    cv_curve,
    es_curve,
    escv_select,
    fold_estimates,
    select_escv,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DoubleExponentialErrors",
    "FitResult",
    "FoldPlan",
    "GaussianErrors",
    "LassoPath",
    "LossSpec",
    "MCSummary",
    "ProxSpec",
    "RegimeSolution",
    "SelectionResult",
    "SimConfig",
    "StabilityCurve",
    "compare_theory_mc",
    "cv_curve",
    "direction_uniformity_check",
    "es_curve",
    "escv_select",
    "find_crossover",
    "fit_lad",
    "fit_m",
    "fit_ols",
    "fit_path",
    "fold_estimates",
    "generate_linear",
    "interpolate_at_tau",
    "lambda_max",
    "lasso_fit",
    "load_csv",
    "make_error_dist",
    "make_folds",
    "r_curve",
    "run_norm_mc",
    "save_csv",
    "select_escv",
    "solve_system",
    "standardize",
    "zhat_expectation",
]
