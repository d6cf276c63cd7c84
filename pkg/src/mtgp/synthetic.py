"""Draw datasets from a known multi-task GP."""

from __future__ import annotations

import numpy as np

from .kernels import Dataset, KernelParams, NoiseParams, TaskCov, task_cov_matrix
from .likelihood import MtgpParams, full_covariance
from .linalg import unvec_t


def two_task_params(correlation=0.9, noise_variance=0.05, lengthscale=1.0,
                    signal_variance=1.0):
    """One-dimensional inputs, two unit-variance tasks with the given correlation."""
    kf = np.array([[1.0, correlation], [correlation, 1.0]])
    return MtgpParams(
        KernelParams([np.log(lengthscale)], np.log(signal_variance)),
        TaskCov.from_matrix(kf),
        NoiseParams(np.log([noise_variance, noise_variance])),
    )


def sample_dataset(params: MtgpParams, num_points, seed=0, low=0.0, high=5.0,
                   missing_fraction=0.0):
    """Uniform inputs on ``[low, high]^D`` and outputs drawn from the model.

    With ``missing_fraction > 0`` entries are dropped at random, keeping at
    least one observation per task.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=(num_points, params.input_dim))
    cov = full_covariance(params, x)
    chol = np.linalg.cholesky(cov)
    y = unvec_t(chol @ rng.standard_normal(cov.shape[0]), num_points, params.num_tasks)
    if missing_fraction > 0:
        drop = rng.uniform(size=y.shape) < missing_fraction
        for m in range(params.num_tasks):
            if drop[:, m].all():
                drop[rng.integers(num_points), m] = False
        y = np.where(drop, np.nan, y)
    return Dataset(x, y)


def task_correlation(params: MtgpParams, i=0, j=1):
    kf = task_cov_matrix(params.task)
    return float(kf[i, j] / np.sqrt(kf[i, i] * kf[j, j]))
