"""Multi-task Gaussian process regression with learned task correlations."""

from .estimators import (
    EmConfig,
    FitError,
    FitResult,
    InnerOptConfig,
    default_params,
    em_fit,
    gradient_fit,
)
from .kernels import Dataset, KernelParams, NoiseParams, TaskCov
from .likelihood import (
    MtgpParams,
    log_marginal_likelihood,
    mll_dense,
    mll_grad,
    mll_kron_fast,
    mll_masked,
)
from .posterior import Prediction, PredictionRequest, predict, sample_predictions

__all__ = [
    "Dataset",
    "EmConfig",
    "FitError",
    "FitResult",
    "InnerOptConfig",
    "KernelParams",
    "MtgpParams",
    "NoiseParams",
    "Prediction",
    "PredictionRequest",
    "TaskCov",
    "default_params",
    "em_fit",
    "gradient_fit",
    "log_marginal_likelihood",
    "mll_dense",
    "mll_grad",
    "mll_kron_fast",
    "mll_masked",
    "predict",
    "sample_predictions",
]

__version__ = "0.1.0"
