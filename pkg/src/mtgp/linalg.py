"""Dense and structured linear algebra for Kronecker-structured covariances.

Flattening convention: every N x M table is flattened row-major, i.e.
``vec(C^T) == C.flatten()``, so the flat index of entry ``(n, m)`` is
``n * M + m``. All Kronecker identities in this package assume that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

LinearOperator = Callable[[np.ndarray], np.ndarray]


class CGConvergenceError(RuntimeError):
    """Conjugate gradients hit the iteration cap before reaching tolerance."""

    def __init__(self, message, best_residual, best_solution=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_solution = best_solution


@dataclass(frozen=True)
class SelectionMap:
    """Observed positions within a flattened N x M output table.

    ``kept`` plays the role of the column-pruned identity ``P``: gathering
    ``v[kept]`` is ``P^T v`` and scattering into zeros is ``P v``.
    """

    total: int
    kept: np.ndarray

    def __post_init__(self):
        kept = np.asarray(self.kept, dtype=np.intp)
        if kept.ndim != 1:
            raise ValueError("kept must be one-dimensional")
        if kept.size and (kept[0] < 0 or kept[-1] >= self.total):
            raise ValueError("kept index out of range")
        if np.any(np.diff(kept) <= 0):
            raise ValueError("kept indices must be strictly increasing")
        kept.setflags(write=False)
        object.__setattr__(self, "kept", kept)

    @classmethod
    def from_table(cls, table):
        """Selection of the non-NaN entries of a 2-D table."""
        flat = np.asarray(table, dtype=float).flatten()
        return cls(flat.size, np.flatnonzero(~np.isnan(flat)))

    @classmethod
    def full(cls, total):
        return cls(total, np.arange(total))

    @property
    def size(self):
        return int(self.kept.size)

    def gather(self, v):
        return np.asarray(v)[self.kept]

    def scatter(self, v):
        out = np.zeros(self.total)
        out[self.kept] = v
        return out

    def dense(self):
        """Explicit ``P`` of shape (total, size). Only meant for checks."""
        return np.eye(self.total)[:, self.kept]


@dataclass(frozen=True)
class CgConfig:
    max_iterations: int = 1000
    residual_tolerance: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.residual_tolerance > 0:
            raise ValueError("residual_tolerance must be positive")


def kron(a, b):
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def vec_t(c):
    """Row-major flattening, ``vec(C^T)``."""
    return np.asarray(c, dtype=float).flatten()


def unvec_t(v, rows, cols):
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape vector of length {v.size} to {rows}x{cols}")
    return v.reshape(rows, cols)


def kron_matvec(a, b, v):
    """``kron(a, b) @ v`` without forming the Kronecker product.

    Uses ``(A kron B) vec(C^T) = vec(B C^T A^T)``, which in row-major
    terms is ``(A @ C @ B.T).flatten()``.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    v = np.asarray(v, dtype=float)
    if v.size != a.shape[1] * b.shape[1]:
        raise ValueError(
            f"vector length {v.size} does not match {a.shape[1]}*{b.shape[1]}"
        )
    c = v.reshape(a.shape[1], b.shape[1])
    return (a @ c @ b.T).flatten()


def masked_kron_matvec(a, b, sel: SelectionMap, v):
    """``P^T kron(a, b) P @ v`` via zero padding, a Kronecker matvec and a gather."""
    v = np.asarray(v, dtype=float)
    if v.size != sel.size:
        raise ValueError(f"vector length {v.size} does not match selection size {sel.size}")
    if sel.total != a.shape[1] * b.shape[1]:
        raise ValueError("selection total does not match operator size")
    return sel.gather(kron_matvec(a, b, sel.scatter(v)))


def cg_solve(apply: LinearOperator, rhs, cfg: CgConfig = CgConfig()):
    """Solve ``A x = rhs`` for SPD ``A`` given only ``apply(x) = A x``.

    Unpreconditioned conjugate gradients started from zero. Raises
    ``CGConvergenceError`` if the relative residual is still above
    ``cfg.residual_tolerance`` after ``cfg.max_iterations`` steps.
    """
    b = np.asarray(rhs, dtype=float)
    b_norm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rr = r @ r
    best_res, best_x = 1.0, x.copy()
    for _ in range(cfg.max_iterations):
        ap = apply(p)
        pap = p @ ap
        if pap <= 0.0:
            raise np.linalg.LinAlgError("operator is not positive definite")
        step = rr / pap
        x = x + step * p
        r = r - step * ap
        rr_new = r @ r
        res = np.sqrt(rr_new) / b_norm
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= cfg.residual_tolerance:
            return x
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise CGConvergenceError(
        f"CG did not converge in {cfg.max_iterations} iterations "
        f"(best relative residual {best_res:.3e})",
        best_res,
        best_x,
    )


def logdet_dense(a):
    """log|A| of an SPD matrix through its Cholesky factor."""
    chol = np.linalg.cholesky(np.asarray(a, dtype=float))
    return 2.0 * np.sum(np.log(np.diag(chol)))


def _lanczos(apply, v0, steps):
    dim = v0.size
    basis = np.zeros((steps, dim))
    alphas, betas = [], []
    v = v0 / np.linalg.norm(v0)
    for k in range(steps):
        basis[k] = v
        w = apply(v)
        alpha = v @ w
        alphas.append(alpha)
        w = w - basis[: k + 1].T @ (basis[: k + 1] @ w)
        # second pass keeps the basis orthogonal in floating point
        w = w - basis[: k + 1].T @ (basis[: k + 1] @ w)
        beta = np.linalg.norm(w)
        if k == steps - 1 or beta <= 1e-12 * max(1.0, abs(alpha)):
            break
        betas.append(beta)
        v = w / beta
    return np.array(alphas), np.array(betas)


def logdet_lanczos(apply: LinearOperator, dim, probes=30, steps=30, seed=0):
    """Stochastic Lanczos quadrature estimate of log|A| for SPD ``A``.

    Each Rademacher probe ``z`` contributes ``dim * e1^T log(T) e1`` where
    ``T`` is the Lanczos tridiagonal matrix started from ``z / |z|``. A zero
    off-diagonal ends the recursion early and the partial ``T`` is used.
    """
    if probes < 1 or steps < 1:
        raise ValueError("probes and steps must be >= 1")
    rng = np.random.default_rng(seed)
    steps = min(steps, dim)
    total = 0.0
    for _ in range(probes):
        z = rng.choice([-1.0, 1.0], size=dim)
        alphas, betas = _lanczos(apply, z, steps)
        if alphas.size == 1:
            evals, evecs = alphas, np.ones((1, 1))
        else:
            evals, evecs = scipy.linalg.eigh_tridiagonal(alphas, betas)
        if np.any(evals <= 0.0):
            raise np.linalg.LinAlgError("operator is not positive definite")
        total += dim * np.sum(evecs[0] ** 2 * np.log(evals))
    return total / probes


def quad_form_identity_check(a, b, c):
    """Both sides of ``vec(C^T)^T (A kron B) vec(C^T) = tr(A C B^T C^T)``."""
    a, b, c = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (a, b, c))
    n, m = c.shape
    if a.shape != (n, n) or b.shape != (m, m):
        raise ValueError("expected A (N x N), B (M x M), C (N x M)")
    v = vec_t(c)
    lhs = v @ kron(a, b) @ v
    rhs = np.trace(a @ c @ b.T @ c.T)
    return float(lhs), float(rhs)


def trace_cyclic_check(c, d):
    """Returns ``(tr(CD), tr(DC))``."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    d = np.atleast_2d(np.asarray(d, dtype=float))
    if c.shape != d.shape[::-1]:
        raise ValueError("expected C (N x M) and D (M x N)")
    return float(np.trace(c @ d)), float(np.trace(d @ c))
