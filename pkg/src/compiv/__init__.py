"""Instrumental-variable estimation of causal effects of compositional treatments.

Modules
-------
simplex      closure, perturbation, powering, Aitchison geometry, diversity
logratio     alr / clr / ilr transforms and coefficient maps
lasso        sum-zero constrained lasso, paths and stability selection
first_stage  OLS, Dirichlet regression and kernel IV machinery
pipelines    end-to-end estimators (2SLS, ILR+LC, DIR+LC, KIV, OnlyLC, ...)
datagen      simulation scenarios with known interventional means
metrics      OOS MSE, beta-MSE, support errors and the benchmark harness
"""

from .datagen import (
    GroundTruth,
    IVDataset,
    SimulationSpec,
    generate,
    interventional_sample,
    preset,
    preset_names,
    sample_zinb,
    true_effect,
)
from .lasso import LossSpec, fit_constrained_lasso, fit_path, stability_select
from .logratio import alr, alr_inv, beta_ilr_to_log, beta_log_to_ilr, clr, clr_inv, helmert_basis, ilr, ilr_inv
from .metrics import benchmark, beta_mse, evaluate, oos_mse, support_errors
from .pipelines import (
    CausalFit,
    fit_2sls,
    fit_alr_lc,
    fit_dir_lc,
    fit_diversity_iv,
    fit_ilr_lc,
    fit_kiv_ilr,
    fit_method,
    fit_only_lc,
    predict_effect,
)
from .simplex import aitchison_inner, aitchison_norm, closure, diversity, perturb, power

__version__ = "0.1.0"

__all__ = [
    "GroundTruth", "IVDataset", "SimulationSpec", "generate", "interventional_sample", "preset",
    "preset_names", "sample_zinb", "true_effect", "LossSpec", "fit_constrained_lasso", "fit_path",
    "stability_select", "alr", "alr_inv", "beta_ilr_to_log", "beta_log_to_ilr", "clr", "clr_inv",
    "helmert_basis", "ilr", "ilr_inv", "benchmark", "beta_mse", "evaluate", "oos_mse", "support_errors",
    "CausalFit", "fit_2sls", "fit_alr_lc", "fit_dir_lc", "fit_diversity_iv", "fit_ilr_lc", "fit_kiv_ilr",
    "fit_method", "fit_only_lc", "predict_effect", "aitchison_inner", "aitchison_norm", "closure",
    "diversity", "perturb", "power",
]
