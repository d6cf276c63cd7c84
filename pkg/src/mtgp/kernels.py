"""Input kernel, task index kernel and their derivatives.

All positive hyperparameters are stored as logs. The input kernel is the
ARD squared exponential

    k(x, x') = s * exp(-0.5 * sum_d (x_d - x'_d)**2 / l_d**2)

with ``log_lengthscales = log l`` and ``log_signal_variance = log s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_JITTER = 1e-8


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KernelParams:
    log_lengthscales: np.ndarray
    log_signal_variance: float = 0.0

    def __post_init__(self):
        ls = _frozen(np.atleast_1d(self.log_lengthscales))
        if ls.ndim != 1 or not np.all(np.isfinite(ls)):
            raise ValueError("log_lengthscales must be a finite 1-D array")
        if not np.isfinite(self.log_signal_variance):
            raise ValueError("log_signal_variance must be finite")
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_signal_variance", float(self.log_signal_variance))

    @property
    def dim(self):
        return self.log_lengthscales.size

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self):
        return float(np.exp(self.log_signal_variance))

    @property
    def num_params(self):
        return self.dim + 1

    def to_vector(self):
        return np.append(self.log_lengthscales, self.log_signal_variance)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:-1], v[-1])


@dataclass(frozen=True, eq=False)
class TaskCov:
    """Index kernel ``K_f = L L^T``.

    ``raw`` holds the lower triangle of ``L`` with the diagonal stored as
    logs; entries above the diagonal are ignored and kept at zero.
    """

    raw: np.ndarray

    def __post_init__(self):
        raw = np.tril(np.atleast_2d(np.asarray(self.raw, dtype=float)))
        if raw.shape[0] != raw.shape[1]:
            raise ValueError("TaskCov needs a square matrix")
        if not np.all(np.isfinite(raw)):
            raise ValueError("TaskCov entries must be finite")
        object.__setattr__(self, "raw", _frozen(raw))

    @classmethod
    def from_factor(cls, factor):
        factor = np.tril(np.atleast_2d(np.asarray(factor, dtype=float)))
        d = np.diag(factor)
        if np.any(d <= 0):
            raise ValueError("Cholesky factor needs a positive diagonal")
        raw = factor.copy()
        np.fill_diagonal(raw, np.log(d))
        return cls(raw)

    @classmethod
    def from_matrix(cls, kf):
        return cls.from_factor(np.linalg.cholesky(np.asarray(kf, dtype=float)))

    @classmethod
    def identity(cls, num_tasks):
        return cls(np.zeros((num_tasks, num_tasks)))

    @property
    def num_tasks(self):
        return self.raw.shape[0]

    @property
    def factor(self):
        factor = self.raw.copy()
        np.fill_diagonal(factor, np.exp(np.diag(self.raw)))
        return factor

    @property
    def num_params(self):
        m = self.num_tasks
        return m * (m + 1) // 2

    def to_vector(self):
        """Lower triangle, row-major: (0,0), (1,0), (1,1), (2,0), ..."""
        return self.raw[np.tril_indices(self.num_tasks)].copy()

    @classmethod
    def from_vector(cls, v, num_tasks):
        raw = np.zeros((num_tasks, num_tasks))
        raw[np.tril_indices(num_tasks)] = v
        return cls(raw)


@dataclass(frozen=True, eq=False)
class NoiseParams:
    log_noise_variances: np.ndarray

    def __post_init__(self):
        v = _frozen(np.atleast_1d(self.log_noise_variances))
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("log_noise_variances must be a finite 1-D array")
        object.__setattr__(self, "log_noise_variances", v)

    @property
    def num_tasks(self):
        return self.log_noise_variances.size

    @property
    def variances(self):
        return np.exp(self.log_noise_variances)

    def matrix(self):
        return np.diag(self.variances)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs ``(N, D)`` and an ``(N, M)`` output table; NaN marks a missing output."""

    inputs: np.ndarray
    outputs: np.ndarray
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.outputs, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("inputs and outputs must be 2-D")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} input rows but {y.shape[0]} output rows")
        if 0 in x.shape or 0 in y.shape:
            raise ValueError("need N >= 1, D >= 1 and M >= 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs must be finite")
        mask = ~np.isnan(y)
        if np.any(np.isinf(y)):
            raise ValueError("outputs must be finite or NaN")
        empty = np.flatnonzero(mask.sum(axis=0) == 0)
        if empty.size:
            raise ValueError(f"task {empty[0]} has no observations")
        for name, arr in (("inputs", x), ("outputs", y), ("mask", mask)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_points(self):
        return self.inputs.shape[0]

    @property
    def num_tasks(self):
        return self.outputs.shape[1]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def is_full(self):
        return bool(self.mask.all())

    @property
    def per_task_counts(self):
        return self.mask.sum(axis=0)

    @property
    def task_offsets(self):
        counts = self.per_task_counts
        return np.concatenate([[0], np.cumsum(counts)[:-1]])

    @property
    def selection(self):
        from .linalg import SelectionMap

        return SelectionMap.from_table(self.outputs)

    def task_major(self):
        """Observed entries ordered task by task.

        Returns ``(rows, tasks, values)``: the input row, task index and
        observed value for each of the ``s_M`` observations.
        """
        tasks, rows = np.nonzero(self.mask.T)
        return rows, tasks, self.outputs[rows, tasks]

    def row_major(self):
        """Observed entries in flattened-table order (the ``P^T vec(Y^T)`` order)."""
        rows, tasks = np.nonzero(self.mask)
        return rows, tasks, self.outputs[rows, tasks]

    def task_data(self, m):
        """Inputs and outputs observed for task ``m`` alone."""
        keep = self.mask[:, m]
        return self.inputs[keep], self.outputs[keep, m]


def _scaled_sqdist(p: KernelParams, x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.ndim < 2:
        x1 = x1.reshape(-1, p.dim)
    if x2.ndim < 2:
        x2 = x2.reshape(-1, p.dim)
    if x1.shape[1] != p.dim or x2.shape[1] != p.dim:
        raise ValueError(f"inputs must have {p.dim} columns")
    ls = p.lengthscales
    diff = (x1[:, None, :] - x2[None, :, :]) / ls
    return diff**2


def kernel_eval(p: KernelParams, x1, x2):
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != (p.dim,) or x2.shape != (p.dim,):
        raise ValueError(f"points must have dimension {p.dim}")
    r2 = np.sum(((x1 - x2) / p.lengthscales) ** 2)
    return p.signal_variance * float(np.exp(-0.5 * r2))


def cross_kernel_matrix(p: KernelParams, x1, x2):
    return p.signal_variance * np.exp(-0.5 * _scaled_sqdist(p, x1, x2).sum(axis=-1))


def kernel_matrix(p: KernelParams, xs, jitter=DEFAULT_JITTER):
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    k = cross_kernel_matrix(p, xs, xs)
    k[np.diag_indices_from(k)] += jitter
    return k


def kernel_matrix_derivative(p: KernelParams, xs, which):
    """Derivative of ``K_x`` w.r.t. one log-parameter.

    ``which`` in ``0..D-1`` selects a log lengthscale, ``D`` the log signal
    variance. Jitter is a constant and does not contribute.
    """
    if not 0 <= which <= p.dim:
        raise ValueError(f"unknown kernel parameter id {which}")
    sq = _scaled_sqdist(p, xs, xs)
    k = p.signal_variance * np.exp(-0.5 * sq.sum(axis=-1))
    if which == p.dim:
        return k
    return k * sq[..., which]


def kernel_matrix_gradients(p: KernelParams, xs):
    """All ``D + 1`` derivative matrices stacked along axis 0."""
    return np.stack([kernel_matrix_derivative(p, xs, i) for i in range(p.num_params)])


def task_cov_matrix(t: TaskCov):
    factor = t.factor
    return factor @ factor.T


def task_cov_derivative(t: TaskCov, i, j, log_diagonal=True):
    """``dK_f / dL_ij = E_ij L^T + L E_ji`` for ``j <= i``.

    With ``log_diagonal`` the diagonal derivative is taken w.r.t. the stored
    ``log L_ii``, which multiplies it by ``L_ii``.
    """
    m = t.num_tasks
    if not (0 <= j <= i < m):
        raise ValueError(f"({i}, {j}) is not a lower-triangular index for M={m}")
    factor = t.factor
    e = np.zeros((m, m))
    e[i, j] = 1.0
    d = e @ factor.T + factor @ e.T
    if i == j and log_diagonal:
        d *= factor[i, i]
    return d


def task_cov_gradients(t: TaskCov):
    """Derivatives w.r.t. every stored parameter, in ``to_vector`` order."""
    rows, cols = np.tril_indices(t.num_tasks)
    return np.stack([task_cov_derivative(t, i, j) for i, j in zip(rows, cols)])


def noise_derivative(n: NoiseParams, m):
    """``dSigma / d log sigma_m^2``, an M x M matrix with one nonzero entry."""
    if not 0 <= m < n.num_tasks:
        raise ValueError(f"task index {m} out of range for M={n.num_tasks}")
    d = np.zeros((n.num_tasks, n.num_tasks))
    d[m, m] = n.variances[m]
    return d


def block_kernel_matrix(p: KernelParams, ds: Dataset, jitter=DEFAULT_JITTER):
    """Input kernel over observations stacked task-major, blocks ``K_x^(i,j)``."""
    rows, _, _ = ds.task_major()
    kx = kernel_matrix(p, ds.inputs, jitter)
    return kx[np.ix_(rows, rows)]
