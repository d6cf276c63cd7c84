"""Marginal and complete-data log-likelihoods of the multi-task GP.

The model is ``vec(Y^T) ~ N(0, K_x kron K_f + I_N kron Sigma)``. Every
objective here is a true log-density: the ``2 pi`` normalisers are kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import (
    DEFAULT_JITTER,
    Dataset,
    KernelParams,
    NoiseParams,
    TaskCov,
    kernel_matrix,
    kernel_matrix_gradients,
    task_cov_gradients,
    task_cov_matrix,
)
from .linalg import (
    CgConfig,
    cg_solve,
    kron,
    logdet_dense,
    logdet_lanczos,
    masked_kron_matvec,
    vec_t,
)

LOG_2PI = np.log(2.0 * np.pi)
EIG_NEGATIVE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MtgpParams:
    """Full hyperparameter set.

    Flattened order (``to_vector``): log lengthscales, log signal variance,
    lower triangle of the task factor row-major (log on the diagonal), then
    log noise variances.
    """

    kernel: KernelParams
    task: TaskCov
    noise: NoiseParams

    def __post_init__(self):
        if self.task.num_tasks != self.noise.num_tasks:
            raise ValueError("task factor and noise disagree on the number of tasks")

    @property
    def input_dim(self):
        return self.kernel.dim

    @property
    def num_tasks(self):
        return self.task.num_tasks

    @property
    def num_params(self):
        return self.kernel.num_params + self.task.num_params + self.num_tasks

    def to_vector(self):
        return np.concatenate(
            [self.kernel.to_vector(), self.task.to_vector(), self.noise.log_noise_variances]
        )

    @classmethod
    def from_vector(cls, v, input_dim, num_tasks):
        v = np.asarray(v, dtype=float)
        nk = input_dim + 1
        nt = num_tasks * (num_tasks + 1) // 2
        if v.size != nk + nt + num_tasks:
            raise ValueError(f"expected {nk + nt + num_tasks} parameters, got {v.size}")
        return cls(
            KernelParams.from_vector(v[:nk]),
            TaskCov.from_vector(v[nk : nk + nt], num_tasks),
            NoiseParams(v[nk + nt :]),
        )

    def param_names(self):
        names = [f"log_lengthscale[{d}]" for d in range(self.input_dim)]
        names.append("log_signal_variance")
        for i, j in zip(*np.tril_indices(self.num_tasks)):
            names.append(f"log_L[{i},{i}]" if i == j else f"L[{i},{j}]")
        names += [f"log_noise[{m}]" for m in range(self.num_tasks)]
        return names


@dataclass(frozen=True, eq=False)
class KronEigenFactors:
    u_x: np.ndarray
    lambda_x: np.ndarray
    v_f: np.ndarray
    lambda_f: np.ndarray
    noise_sqrt: np.ndarray


@dataclass(frozen=True, eq=False)
class GradReport:
    value: float
    gradient: np.ndarray


def _require_full(ds: Dataset):
    if not ds.is_full:
        raise ValueError("this objective needs a dataset without missing outputs")


def _gaussian_logpdf(cov, y):
    chol = np.linalg.cholesky(cov)
    z = scipy.linalg.solve_triangular(chol, y, lower=True)
    return -0.5 * (z @ z) - np.sum(np.log(np.diag(chol))) - 0.5 * y.size * LOG_2PI


def _clamped_eigh(a, what):
    lam, vec = np.linalg.eigh(a)
    if lam.min() < -EIG_NEGATIVE_TOL:
        raise np.linalg.LinAlgError(f"{what} has eigenvalue {lam.min():.3e} < 0")
    return np.clip(lam, 0.0, None), vec


def full_covariance(p: MtgpParams, inputs, jitter=DEFAULT_JITTER):
    """Dense ``K_x kron K_f + I_N kron Sigma`` (NM x NM)."""
    kx = kernel_matrix(p.kernel, inputs, jitter)
    n = kx.shape[0]
    return kron(kx, task_cov_matrix(p.task)) + kron(np.eye(n), p.noise.matrix())


def observed_covariance(p: MtgpParams, ds: Dataset, order="task", jitter=DEFAULT_JITTER):
    """Covariance of the observed entries and their values.

    ``order="task"`` stacks observations task by task (blocks
    ``K_x^(i,j) (K_f)_ij``); ``order="row"`` follows the flattened table.
    Returns ``(cov, rows, tasks, y)``.
    """
    rows, tasks, y = ds.task_major() if order == "task" else ds.row_major()
    kx = kernel_matrix(p.kernel, ds.inputs, jitter)
    kf = task_cov_matrix(p.task)
    cov = kx[np.ix_(rows, rows)] * kf[np.ix_(tasks, tasks)]
    cov[np.diag_indices_from(cov)] += p.noise.variances[tasks]
    return cov, rows, tasks, y


def masked_covariance(p: MtgpParams, ds: Dataset, jitter=DEFAULT_JITTER):
    """Task-major ``K_x * K_f + I * Sigma`` (Khatri-Rao form), shape s_M x s_M."""
    return observed_covariance(p, ds, "task", jitter)[0]


def mll_dense(p: MtgpParams, ds: Dataset, jitter=DEFAULT_JITTER):
    _require_full(ds)
    cov = full_covariance(p, ds.inputs, jitter)
    return float(_gaussian_logpdf(cov, vec_t(ds.outputs)))


def kron_eigen_factorize(p: MtgpParams, ds: Dataset, jitter=DEFAULT_JITTER):
    """Eigendecompose ``K_x`` and the noise-whitened ``Sigma^-1/2 K_f Sigma^-1/2``."""
    kx = kernel_matrix(p.kernel, ds.inputs, jitter)
    lam_x, u_x = _clamped_eigh(kx, "K_x")
    s = np.sqrt(p.noise.variances)
    whitened = task_cov_matrix(p.task) / np.outer(s, s)
    lam_f, v_f = _clamped_eigh(0.5 * (whitened + whitened.T), "whitened K_f")
    return KronEigenFactors(u_x, lam_x, v_f, lam_f, s)


def mll_kron_fast(p: MtgpParams, ds: Dataset, cache: KronEigenFactors | None = None,
                  jitter=DEFAULT_JITTER):
    """Marginal log-likelihood in O(N^3 + M^3) from the eigen factors.

    ``K_xf + S = U (Lambda_x kron Lambda_f + I) U^T`` with
    ``U = U_x kron Sigma^1/2 V_f``, and ``U^-1 vec(Y^T)`` is the flattened
    ``U_x^T Y Sigma^-1/2 V_f``.
    """
    _require_full(ds)
    if cache is None:
        cache = kron_eigen_factorize(p, ds, jitter)
    n, m = ds.outputs.shape
    rotated = cache.u_x.T @ (ds.outputs / cache.noise_sqrt) @ cache.v_f
    spectrum = 1.0 + np.outer(cache.lambda_x, cache.lambda_f)
    logdet = 2.0 * n * np.sum(np.log(cache.noise_sqrt)) + np.sum(np.log(spectrum))
    quad = np.sum(rotated**2 / spectrum)
    return float(-0.5 * logdet - 0.5 * quad - 0.5 * n * m * LOG_2PI)


def mll_masked(p: MtgpParams, ds: Dataset, mode="exact", logdet="dense",
               cg: CgConfig = CgConfig(), probes=30, steps=30, seed=0,
               jitter=DEFAULT_JITTER):
    """Log-likelihood of the observed entries only.

    ``mode="exact"`` factorises the masked covariance. ``mode="iterative"``
    solves against ``P^T (K_xf + S) P`` with CG using masked Kronecker
    matvecs, and takes the log-determinant either densely or by Lanczos
    quadrature (``logdet="lanczos"``).
    """
    if mode == "exact":
        cov, _, _, y = observed_covariance(p, ds, "task", jitter)
        return float(_gaussian_logpdf(cov, y))
    if mode != "iterative":
        raise ValueError(f"unknown mode {mode!r}")

    sel = ds.selection
    y = sel.gather(vec_t(ds.outputs))
    kx = kernel_matrix(p.kernel, ds.inputs, jitter)
    kf = task_cov_matrix(p.task)
    noise = sel.gather(np.tile(p.noise.variances, ds.num_points))

    def apply(v):
        return masked_kron_matvec(kx, kf, sel, v) + noise * v

    alpha = cg_solve(apply, y, cg)
    if logdet == "dense":
        ld = logdet_dense(observed_covariance(p, ds, "row", jitter)[0])
    elif logdet == "lanczos":
        ld = logdet_lanczos(apply, y.size, probes, steps, seed)
    else:
        raise ValueError(f"unknown logdet method {logdet!r}")
    return float(-0.5 * ld - 0.5 * (y @ alpha) - 0.5 * y.size * LOG_2PI)


def log_marginal_likelihood(p: MtgpParams, ds: Dataset, masked_mode="auto",
                            jitter=DEFAULT_JITTER):
    """Dispatch: eigen fast path for full tables, masked path otherwise.

    ``masked_mode`` is ``"dense"``, ``"iterative"`` or ``"auto"`` (dense
    up to 500 observations).
    """
    if ds.is_full:
        return mll_kron_fast(p, ds, jitter=jitter)
    if masked_mode == "auto":
        masked_mode = "dense" if int(ds.mask.sum()) <= 500 else "iterative"
    mode = "exact" if masked_mode == "dense" else masked_mode
    return mll_masked(p, ds, mode=mode, jitter=jitter)


def mll_grad(p: MtgpParams, ds: Dataset, jitter=DEFAULT_JITTER):
    """Value and gradient of the marginal log-likelihood.

    With ``Q = C^-1``, ``alpha = Q y`` and ``G = dC/dz``,
    ``dL/dz = 0.5 * (alpha^T G alpha - tr(Q G)) = 0.5 * sum(W * G)`` for
    ``W = alpha alpha^T - Q``. ``C`` is the covariance of the observed
    entries, so a full table gives exactly ``K_x kron K_f + I kron Sigma``.
    """
    cov, rows, tasks, y = observed_covariance(p, ds, "row", jitter)
    chol = scipy.linalg.cho_factor(cov, lower=True)
    alpha = scipy.linalg.cho_solve(chol, y)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    value = -0.5 * logdet - 0.5 * (y @ alpha) - 0.5 * y.size * LOG_2PI
    w = np.outer(alpha, alpha) - scipy.linalg.cho_solve(chol, np.eye(y.size))

    rr = np.ix_(rows, rows)
    tt = np.ix_(tasks, tasks)
    kx = kernel_matrix(p.kernel, ds.inputs, jitter)[rr]
    kf = task_cov_matrix(p.task)[tt]

    grad = []
    for dkx in kernel_matrix_gradients(p.kernel, ds.inputs):
        grad.append(0.5 * np.sum(w * dkx[rr] * kf))
    for dkf in task_cov_gradients(p.task):
        grad.append(0.5 * np.sum(w * kx * dkf[tt]))
    w_diag = np.diag(w)
    for m, var in enumerate(p.noise.variances):
        grad.append(0.5 * var * np.sum(w_diag[tasks == m]))
    return GradReport(float(value), np.array(grad))


def complete_data_log_likelihood(p: MtgpParams, ds: Dataset, f, jitter=DEFAULT_JITTER):
    """``log N(y | f, S) + log N(f | 0, K_xf)`` for a full latent table ``f``.

    Evaluated in the factorised form
    ``-N sum log sigma_m - M/2 log|K_x| - N/2 log|K_f| - sum (y - f)^2 / 2 sigma^2
    - tr(F^T K_x^-1 F K_f^-1) / 2 - NM log 2 pi``.
    """
    _require_full(ds)
    f = np.asarray(f, dtype=float)
    y = ds.outputs
    n, m = y.shape
    if f.shape != (n, m):
        raise ValueError(f"latent table must be {n}x{m}")
    kx = kernel_matrix(p.kernel, ds.inputs, jitter)
    kf = task_cov_matrix(p.task)
    kx_chol = scipy.linalg.cho_factor(kx, lower=True)
    kf_chol = scipy.linalg.cho_factor(kf, lower=True)
    logdet_kx = 2.0 * np.sum(np.log(np.diag(kx_chol[0])))
    logdet_kf = 2.0 * np.sum(np.log(np.diag(kf_chol[0])))
    sigma2 = p.noise.variances
    kx_inv_f = scipy.linalg.cho_solve(kx_chol, f)
    trace_term = np.trace(scipy.linalg.cho_solve(kf_chol, f.T @ kx_inv_f))
    return float(
        -0.5 * n * np.sum(np.log(sigma2))
        - 0.5 * m * logdet_kx
        - 0.5 * n * logdet_kf
        - np.sum((y - f) ** 2 / (2.0 * sigma2))
        - 0.5 * trace_term
        - n * m * LOG_2PI
    )
