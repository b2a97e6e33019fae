"""Debiased estimation of concordance and time-dependent AUC for linear
survival scoring rules."""

__version__ = "0.1.0"

from .core import Dataset, StepCurves, StepFunction, event_grid, load_csv, write_csv
from .discrimination import (DiscriminationEstimate, NuisanceBundle, build_bundle,
                             compute_dl_matrix, efficient_survival, estimate_AUC_t,
                             estimate_C_tau, estimate_K_tau, fit_bundle)
from .inference import EstimatorSpec, bootstrap, contrast, crossfit_wrap
from .scorerule import estimate_beta_al

__all__ = [
    "Dataset", "StepCurves", "StepFunction", "event_grid", "load_csv", "write_csv",
    "DiscriminationEstimate", "NuisanceBundle", "build_bundle", "compute_dl_matrix",
    "efficient_survival", "estimate_AUC_t", "estimate_C_tau", "estimate_K_tau", "fit_bundle",
    "EstimatorSpec", "bootstrap", "contrast", "crossfit_wrap", "estimate_beta_al",
]
