"""Debiased machine-learning estimators for landmark survival and post-landmark markers."""

__version__ = "0.1.0"

from .data import AnalysisConfig, Dataset, DataError, ingest_csv, landmark_view, write_csv  # noqa: E402
from .crossfit import crossfit_estimates, make_folds  # noqa: E402
from .estimators import EifSample, onestep_eta, onestep_surv, plugin_eta  # noqa: E402
from .inference import (confidence_ellipse, joint_cov, se_ci, simplex_point,  # noqa: E402
                        utility_test, wald_equality)
from .nuisance import fit_bundle  # noqa: E402

__all__ = [
    "AnalysisConfig", "Dataset", "DataError", "EifSample", "confidence_ellipse",
    "crossfit_estimates", "fit_bundle", "ingest_csv", "joint_cov", "landmark_view",
    "make_folds", "onestep_eta", "onestep_surv", "plugin_eta", "se_ci", "simplex_point",
    "utility_test", "wald_equality", "write_csv",
]
