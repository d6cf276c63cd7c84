"""Hyperparameter fitting: Monte-Carlo EM and marginal-likelihood ascent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import logsumexp

from .kernels import (
    DEFAULT_JITTER,
    Dataset,
    KernelParams,
    NoiseParams,
    TaskCov,
    kernel_matrix,
    task_cov_matrix,
)
from .likelihood import MtgpParams, full_covariance, mll_grad, mll_kron_fast
from .linalg import kron, unvec_t, vec_t
from .posterior import psd_sqrt

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-10
TASK_COV_RIDGE = 1e-8
LOG_LENGTHSCALE_BOUNDS = (-8.0, 8.0)
RESTART_SCALE = 0.5


class FitError(RuntimeError):
    """Every restart of a fit failed."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


@dataclass(frozen=True)
class InnerOptConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-5
    step_memory: int = 10
    num_restarts: int = 1
    seed: int = 0
    function_tolerance: float = 1e-13

    def __post_init__(self):
        if min(self.max_iterations, self.step_memory, self.num_restarts) < 1:
            raise ValueError("iteration, memory and restart counts must be positive")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")


@dataclass(frozen=True)
class EmConfig:
    num_latent_samples: int = 50
    max_em_iterations: int = 10
    theta_opt: InnerOptConfig = field(default_factory=lambda: InnerOptConfig(max_iterations=100))
    seed: int = 0
    e_step_mode: str = "sample"

    def __post_init__(self):
        if self.num_latent_samples < 1 or self.max_em_iterations < 0:
            raise ValueError("num_latent_samples must be >= 1 and iterations >= 0")
        if self.e_step_mode not in ("sample", "exact"):
            raise ValueError(f"unknown e_step_mode {self.e_step_mode!r}")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a fit.

    ``trace`` holds the marginal log-likelihood after each iteration, so
    ``len(trace) == iterations_used``. With no iterations the final
    objective is the initial one.
    """

    params: MtgpParams
    final_objective: float
    trace: tuple
    converged: bool
    iterations_used: int
    initial_objective: float
    restart_objectives: tuple = ()


def default_params(ds: Dataset):
    """Unit lengthscales and signal, ``L = I``, noise at 1% of each task's variance."""
    variances = np.array([np.var(ds.task_data(m)[1]) for m in range(ds.num_tasks)])
    variances = np.where(variances > 0, variances, 1.0)
    return MtgpParams(
        KernelParams(np.zeros(ds.input_dim), 0.0),
        TaskCov.identity(ds.num_tasks),
        NoiseParams(np.log(0.01 * variances)),
    )


def _objective(p, ds, jitter):
    return mll_kron_fast(p, ds, jitter=jitter)


# -- E step -------------------------------------------------------------------


def latent_posterior(p: MtgpParams, ds: Dataset, jitter=DEFAULT_JITTER):
    """Mean and covariance of ``vec(F^T)`` given the full table ``Y``."""
    if not ds.is_full:
        raise ValueError("latent posterior needs a dataset without missing outputs")
    kxf = kron(kernel_matrix(p.kernel, ds.inputs, jitter), task_cov_matrix(p.task))
    chol = scipy.linalg.cho_factor(full_covariance(p, ds.inputs, jitter), lower=True)
    gain = scipy.linalg.cho_solve(chol, kxf)  # (K_xf + S)^-1 K_xf
    mean = gain.T @ vec_t(ds.outputs)
    cov = kxf - kxf @ gain
    return mean, 0.5 * (cov + cov.T)


def sample_latents(post_mean, post_cov, k, num_tasks, seed=0):
    """Draw ``k`` latent tables, shape ``(k, N, M)``. ``seed`` may be a Generator."""
    rng = np.random.default_rng(seed)
    root = psd_sqrt(post_cov)
    z = rng.standard_normal((k, root.shape[1]))
    draws = post_mean + z @ root.T
    n = post_mean.size // num_tasks
    return np.stack([unvec_t(d, n, num_tasks) for d in draws])


def kx_solver(kernel: KernelParams, inputs, jitter=DEFAULT_JITTER) -> Callable:
    chol = scipy.linalg.cho_factor(kernel_matrix(kernel, inputs, jitter), lower=True)
    return lambda rhs: scipy.linalg.cho_solve(chol, rhs)


# -- M step -------------------------------------------------------------------


def m_step_sigma(ds: Dataset, latents):
    """Per-task mean squared residual over points and samples."""
    latents = np.asarray(latents, dtype=float)
    if latents.ndim == 2:
        latents = latents[None]
    resid2 = (ds.outputs[None] - latents) ** 2
    sigma2 = np.maximum(resid2.mean(axis=(0, 1)), NOISE_FLOOR)
    return NoiseParams(np.log(sigma2))


def m_step_sigma_moments(ds: Dataset, mean, cov):
    """``m_step_sigma`` with the sample average replaced by its expectation."""
    n, m = ds.outputs.shape
    mu = unvec_t(mean, n, m)
    var = unvec_t(np.diag(cov), n, m)
    sigma2 = ((ds.outputs - mu) ** 2 + var).mean(axis=0)
    return NoiseParams(np.log(np.maximum(sigma2, NOISE_FLOOR)))


def _task_scatter(latents, kx_solve):
    latents = np.asarray(latents, dtype=float)
    if latents.ndim == 2:
        latents = latents[None]
    return np.stack([f.T @ kx_solve(f) for f in latents])


def expected_task_scatter(mean, cov, kx_solve, num_tasks):
    """``E[F^T K_x^-1 F]`` under ``vec(F^T) ~ N(mean, cov)``."""
    n = mean.size // num_tasks
    mu = unvec_t(mean, n, num_tasks)
    kx_inv = kx_solve(np.eye(n))
    cov4 = cov.reshape(n, num_tasks, n, num_tasks)
    return mu.T @ kx_inv @ mu + np.einsum("ij,iajb->ab", kx_inv, cov4)


def _task_cov_from_scatter(scatter, n):
    kf = scatter / n
    kf = 0.5 * (kf + kf.T) + TASK_COV_RIDGE * np.eye(kf.shape[0])
    return TaskCov.from_matrix(kf)


def m_step_task_cov(ds: Dataset, latents, kx_solve):
    """``K_f = mean_k F_k^T K_x^-1 F_k / N`` plus a small ridge, as a Cholesky factor."""
    return _task_cov_from_scatter(_task_scatter(latents, kx_solve).mean(axis=0), ds.num_points)


def m_step_task_cov_moments(ds: Dataset, mean, cov, kx_solve):
    scatter = expected_task_scatter(mean, cov, kx_solve, ds.num_tasks)
    return _task_cov_from_scatter(scatter, ds.num_points)


def m_step_theta_objective(p: KernelParams, ds: Dataset, latents, jitter=DEFAULT_JITTER):
    """``M log|K_x| + N log(mean_k |F_k^T K_x^-1 F_k|)``, to be minimised over theta.

    The sample average sits inside the logarithm and is taken in log space.
    """
    n, m = ds.outputs.shape
    kx = kernel_matrix(p, ds.inputs, jitter)
    chol = scipy.linalg.cho_factor(kx, lower=True)
    logdet_kx = 2.0 * np.sum(np.log(np.diag(chol[0])))
    scatter = _task_scatter(latents, lambda r: scipy.linalg.cho_solve(chol, r))
    signs, logdets = np.linalg.slogdet(scatter)
    if np.any(signs <= 0):
        raise np.linalg.LinAlgError("latent scatter matrix is singular")
    return float(m * logdet_kx + n * (logsumexp(logdets) - np.log(len(logdets))))


def m_step_theta_objective_moments(p: KernelParams, ds: Dataset, mean, cov,
                                   jitter=DEFAULT_JITTER):
    """Moment version: ``M log|K_x| + N log|E[F^T K_x^-1 F]|`` (log of expectation)."""
    n, m = ds.outputs.shape
    kx = kernel_matrix(p, ds.inputs, jitter)
    chol = scipy.linalg.cho_factor(kx, lower=True)
    logdet_kx = 2.0 * np.sum(np.log(np.diag(chol[0])))
    scatter = expected_task_scatter(mean, cov, lambda r: scipy.linalg.cho_solve(chol, r), m)
    sign, logdet = np.linalg.slogdet(scatter)
    if sign <= 0:
        raise np.linalg.LinAlgError("expected scatter matrix is singular")
    return float(m * logdet_kx + n * logdet)


def _optimize_lengthscales(kernel: KernelParams, objective, cfg: InnerOptConfig):
    # signal variance cancels out of the profiled objective, so only lengthscales move
    def fun(log_ls):
        try:
            return objective(KernelParams(log_ls, kernel.log_signal_variance))
        except np.linalg.LinAlgError:
            return np.inf

    res = scipy.optimize.minimize(
        fun,
        kernel.log_lengthscales,
        method="L-BFGS-B",
        bounds=[LOG_LENGTHSCALE_BOUNDS] * kernel.dim,
        options=dict(maxiter=cfg.max_iterations, maxcor=cfg.step_memory,
                     gtol=cfg.gradient_tolerance),
    )
    if not np.isfinite(res.fun) or res.fun > fun(kernel.log_lengthscales):
        return kernel
    return KernelParams(res.x, kernel.log_signal_variance)


def em_fit(ds: Dataset, init: MtgpParams, cfg: EmConfig = EmConfig(), jitter=DEFAULT_JITTER):
    """Monte-Carlo EM.

    Each iteration samples latents from the current posterior, refits the
    lengthscales on the profiled objective, resamples under the new
    lengthscales, then updates noise and ``K_f`` in closed form. With
    ``e_step_mode="exact"`` the samples are replaced by posterior moments.
    Stops after ``max_em_iterations`` or when the relative change of the
    marginal log-likelihood stays below 1e-6 for three iterations.
    """
    if not ds.is_full:
        raise ValueError("EM requires full observations")
    rng = np.random.default_rng(cfg.seed)
    exact = cfg.e_step_mode == "exact"
    m = ds.num_tasks
    params = init
    initial = _objective(init, ds, jitter)
    trace = []
    converged = False

    def e_step(p):
        mean, cov = latent_posterior(p, ds, jitter)
        if exact:
            return mean, cov
        return sample_latents(mean, cov, cfg.num_latent_samples, m, rng)

    for it in range(cfg.max_em_iterations):
        stats = e_step(params)
        if exact:
            theta_obj = lambda k: m_step_theta_objective_moments(k, ds, *stats, jitter)  # noqa: E731
        else:
            theta_obj = lambda k: m_step_theta_objective(k, ds, stats, jitter)  # noqa: E731
        kernel = _optimize_lengthscales(params.kernel, theta_obj, cfg.theta_opt)

        stats = e_step(MtgpParams(kernel, params.task, params.noise))
        solve = kx_solver(kernel, ds.inputs, jitter)
        if exact:
            noise = m_step_sigma_moments(ds, *stats)
            task = m_step_task_cov_moments(ds, *stats, solve)
        else:
            noise = m_step_sigma(ds, stats)
            task = m_step_task_cov(ds, stats, solve)
        params = MtgpParams(kernel, task, noise)
        trace.append(_objective(params, ds, jitter))
        log.debug("em iteration %d: mll %.6f", it, trace[-1])

        if len(trace) >= 4:
            recent = np.array(trace[-4:])
            rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[1:]), 1e-300)
            if np.all(rel < 1e-6):
                converged = True
                break

    final = trace[-1] if trace else initial
    return FitResult(params, final, tuple(trace), converged, len(trace), initial)


# -- gradient route -----------------------------------------------------------


def _single_ascent(ds, start: MtgpParams, cfg: InnerOptConfig, jitter):
    d, m = start.input_dim, start.num_tasks
    memo = {}

    def negative(v):
        key = v.tobytes()
        if key not in memo:
            try:
                rep = mll_grad(MtgpParams.from_vector(v, d, m), ds, jitter)
                out = (-rep.value, -rep.gradient)
            except (np.linalg.LinAlgError, ValueError):
                out = (np.inf, np.zeros_like(v))
            memo[key] = out
        return memo[key]

    x0 = start.to_vector()
    initial = -negative(x0)[0]
    if not np.isfinite(initial):
        raise np.linalg.LinAlgError("covariance is not positive definite at the start point")
    trace = []

    def record(xk):
        trace.append(-negative(np.asarray(xk))[0])

    res = scipy.optimize.minimize(
        negative,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options=dict(maxiter=cfg.max_iterations, maxcor=cfg.step_memory,
                     gtol=cfg.gradient_tolerance, ftol=cfg.function_tolerance),
    )
    x, value = res.x, -res.fun
    if not np.isfinite(value):
        raise np.linalg.LinAlgError("optimizer ended on a non-finite objective")
    params = MtgpParams.from_vector(x, d, m)
    grad_norm = float(np.max(np.abs(negative(x)[1])))
    return FitResult(
        params, value, tuple(trace), bool(grad_norm <= cfg.gradient_tolerance),
        len(trace), initial,
    )


def restart_points(init: MtgpParams, cfg: InnerOptConfig):
    """Start points: ``init`` itself, then seeded Gaussian perturbations of it."""
    base = init.to_vector()
    points = [init]
    for r in range(1, cfg.num_restarts):
        rng = np.random.default_rng([cfg.seed, r])
        v = base + RESTART_SCALE * rng.standard_normal(base.size)
        points.append(MtgpParams.from_vector(v, init.input_dim, init.num_tasks))
    return points


def gradient_fit(ds: Dataset, init: MtgpParams, cfg: InnerOptConfig = InnerOptConfig(),
                 jitter=DEFAULT_JITTER):
    """Maximise the marginal log-likelihood with L-BFGS over all parameters.

    Works on full and partially observed tables alike. Runs one ascent per
    start point from ``restart_points`` and keeps the best.
    """
    results, failures = [], []
    for r, start in enumerate(restart_points(init, cfg)):
        try:
            results.append(_single_ascent(ds, start, cfg, jitter))
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            failures.append((r, repr(exc)))
            log.warning("restart %d failed: %s", r, exc)
    if not results:
        raise FitError(f"all {cfg.num_restarts} restarts failed", failures)
    best = max(results, key=lambda res: res.final_objective)
    return FitResult(
        best.params,
        best.final_objective,
        best.trace,
        best.converged,
        best.iterations_used,
        best.initial_objective,
        tuple((res.initial_objective, res.final_objective) for res in results),
    )
