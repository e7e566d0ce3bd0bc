"""Reluctant pairwise-interaction regression.

Fit main effects first, stream over all O(p^2) candidate interactions
exactly once to keep the most promising ones, then refit a sparse model
on main effects plus the survivors.  Includes baselines (all-pairs lasso,
main-effects lasso, marginal screening + lasso, oracle least squares),
simulation generators, and analytic oracles for verification.
"""

from .core import Dataset, TauMap, interaction_column, read_delimited, tau, tau_inverse
from .lasso import (
    LassoConfig,
    LassoFit,
    LassoPath,
    cross_validate,
    fit_path,
    kkt_residuals,
    predict,
    soft_threshold,
)
from .pipeline import (
    SprinterConfig,
    SprinterModel,
    evaluate,
    fit_apl,
    fit_mel,
    fit_oracle_ls,
    fit_sis_lasso,
    fit_sprinter,
    load_model,
    save_model,
)
from .screen import (
    ScreenResult,
    ScreenScore,
    residual_correlation,
    screen_threshold,
    screen_topm,
)
from .simgen import (
    SignalSpec,
    SimulatedData,
    gen_binary_tree,
    gen_gaussian_ar,
    make_response,
    mir,
    structure,
    tree_structure,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "TauMap",
    "interaction_column",
    "read_delimited",
    "tau",
    "tau_inverse",
    "LassoConfig",
    "LassoFit",
    "LassoPath",
    "cross_validate",
    "fit_path",
    "kkt_residuals",
    "predict",
    "soft_threshold",
    "ScreenResult",
    "ScreenScore",
    "residual_correlation",
    "screen_threshold",
    "screen_topm",
    "SprinterConfig",
    "SprinterModel",
    "evaluate",
    "fit_apl",
    "fit_mel",
    "fit_oracle_ls",
    "fit_sis_lasso",
    "fit_sprinter",
    "load_model",
    "save_model",
    "SignalSpec",
    "SimulatedData",
    "gen_binary_tree",
    "gen_gaussian_ar",
    "make_response",
    "mir",
    "structure",
    "tree_structure",
]
