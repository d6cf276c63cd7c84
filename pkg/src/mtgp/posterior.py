"""Predictions of the latent functions at new (input, task) pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import DEFAULT_JITTER, Dataset, cross_kernel_matrix, task_cov_matrix
from .likelihood import MtgpParams, observed_covariance

VARIANCE_NEGATIVE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PredictionRequest:
    new_inputs: np.ndarray
    tasks: np.ndarray
    want_cov: bool = True

    def __post_init__(self):
        x = np.asarray(self.new_inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        tasks = np.atleast_1d(np.asarray(self.tasks))
        if tasks.size and not np.issubdtype(tasks.dtype, np.integer):
            if np.any(tasks != np.round(tasks)):
                raise ValueError("task indices must be integers")
        tasks = tasks.astype(np.intp)
        if x.shape[0] == 0:
            raise ValueError("need at least one query point")
        if tasks.shape != (x.shape[0],):
            raise ValueError("need exactly one task index per query point")
        if np.any(tasks < 0):
            raise ValueError("task indices must be non-negative")
        object.__setattr__(self, "new_inputs", x)
        object.__setattr__(self, "tasks", tasks)


@dataclass(frozen=True, eq=False)
class Prediction:
    means: np.ndarray
    cov: np.ndarray | None = None

    @property
    def variances(self):
        if self.cov is None:
            raise ValueError("prediction was made without a covariance")
        return np.diag(self.cov).copy()


def predict(p: MtgpParams, ds: Dataset, req: PredictionRequest, include_noise=False,
            jitter=DEFAULT_JITTER):
    """Posterior of ``f_task(x)`` for each query, conditioned on the observed entries.

    Cross-covariances are ``k(x_i, x_q) * K_f[task_i, task_q]``. With
    ``include_noise`` the task noise variance is added to the diagonal so the
    result describes new observations instead of latent values.
    """
    m = p.num_tasks
    if np.any(req.tasks >= m):
        raise ValueError(f"task index {req.tasks.max()} out of range for M={m}")
    if req.new_inputs.shape[1] != p.input_dim:
        raise ValueError(f"query inputs must have {p.input_dim} columns")

    cov, rows, tasks, y = observed_covariance(p, ds, "task", jitter)
    kf = task_cov_matrix(p.task)
    cross = cross_kernel_matrix(p.kernel, ds.inputs[rows], req.new_inputs)
    cross *= kf[np.ix_(tasks, req.tasks)]

    chol = scipy.linalg.cho_factor(cov, lower=True)
    means = cross.T @ scipy.linalg.cho_solve(chol, y)
    if not req.want_cov:
        return Prediction(means)

    prior = cross_kernel_matrix(p.kernel, req.new_inputs, req.new_inputs)
    prior *= kf[np.ix_(req.tasks, req.tasks)]
    half = scipy.linalg.solve_triangular(chol[0], cross, lower=True)
    post = prior - half.T @ half
    post = 0.5 * (post + post.T)
    d = np.diag(post).copy()
    if d.min() < -VARIANCE_NEGATIVE_TOL:
        raise np.linalg.LinAlgError(f"negative posterior variance {d.min():.3e}")
    post[np.diag_indices_from(post)] = np.clip(d, 0.0, None)
    if include_noise:
        post[np.diag_indices_from(post)] += p.noise.variances[req.tasks]
    return Prediction(means, post)


def psd_sqrt(cov):
    """Symmetric square root with tiny negative eigenvalues clamped to zero."""
    cov = 0.5 * (cov + cov.T)
    lam, vec = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(lam).max()))
    if lam.min() < -1e-8 * scale:
        raise np.linalg.LinAlgError(f"covariance is not PSD (eigenvalue {lam.min():.3e})")
    return vec * np.sqrt(np.clip(lam, 0.0, None))


def sample_predictions(pred: Prediction, k, seed=0):
    """``k`` joint Gaussian draws, shape ``(k, num_queries)``."""
    if pred.cov is None:
        raise ValueError("sampling needs a prediction with covariance")
    rng = np.random.default_rng(seed)
    root = psd_sqrt(pred.cov)
    z = rng.standard_normal((k, root.shape[1]))
    return pred.means + z @ root.T
