"""Dense linear-algebra kernels: extreme singular values and least squares."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import qr, solve_triangular, svdvals
from scipy.sparse.linalg import svds

from .errors import RankDeficientError, ShapeMismatchError

DENSE_SVD_LIMIT = 128


def as_dense(a) -> np.ndarray:
    """Float64 view of a matrix-like (arrays or objects with ``entries``)."""
    a = getattr(a, "entries", a)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def sigma_max(a, tol: float = 1e-12) -> float:
    """Largest singular value.

    Small matrices go straight to LAPACK; larger ones use implicitly
    restarted Lanczos (ARPACK) on the Gram operator, which reaches 1e-8
    relative accuracy even when the leading singular gap is tiny.
    """
    a = as_dense(a)
    if min(a.shape) <= DENSE_SVD_LIMIT:
        return float(svdvals(a)[0])
    v0 = np.random.default_rng(0).standard_normal(min(a.shape))
    s = svds(a, k=1, tol=tol, v0=v0, return_singular_vectors=False)
    return float(s[0])


def sigma_minmax_submatrix(a, support) -> tuple[float, float]:
    """Extreme singular values of the columns of ``a`` listed in ``support``."""
    a = as_dense(a)
    support = np.asarray(support, dtype=np.intp)
    if support.size == 0:
        raise ValueError("support must be nonempty")
    if support.min() < 0 or support.max() >= a.shape[1]:
        raise IndexError("support index out of range")
    s = svdvals(a[:, support])
    smin = 0.0 if len(support) > a.shape[0] else float(s[-1])
    return smin, float(s[0])


def lstsq(a, b) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a x = b``."""
    a = as_dense(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise ShapeMismatchError(f"{a.shape[0]} rows but right-hand side has length {b.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite entries")
    return np.linalg.lstsq(a, b, rcond=None)[0]


class MinNormSolver:
    """Applies ``pinv(a)`` and its transpose for a full-row-rank ``a``.

    ``a^T = Q R`` is factored once; each application is then two
    triangular solves, and the pseudoinverse itself is never formed.
    """

    def __init__(self, a, rcond: float = 1e-10):
        a = as_dense(a)
        m, n = a.shape
        if m > n:
            raise RankDeficientError(f"{m}x{n} matrix cannot have full row rank")
        self.q, self.r = qr(a.T, mode="economic")
        d = np.abs(np.diag(self.r))
        if d.min() <= rcond * d.max():
            raise RankDeficientError("matrix is rank deficient")
        self.shape = (m, n)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``pinv(a) @ b``."""
        return self.q @ solve_triangular(self.r, b, trans="T")

    def solve_adjoint(self, u: np.ndarray) -> np.ndarray:
        """``pinv(a).T @ u``."""
        return solve_triangular(self.r, self.q.T @ u)


def sigma_max_pinv_product(a0, da, tol: float = 1e-6, max_iter: int = 10_000,
                           seed: int = 0) -> float:
    """``sigma_max(pinv(a0) @ da)`` by power iteration on the implicit operator."""
    a0 = as_dense(a0)
    da = as_dense(da)
    if a0.shape != da.shape:
        raise ShapeMismatchError(f"{a0.shape} vs {da.shape}")
    solver = MinNormSolver(a0)
    v = np.random.default_rng(seed).standard_normal(a0.shape[1])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        w = solver.solve(da @ v)
        lam = float(w @ w)
        if lam == 0.0:
            return 0.0
        v = da.T @ solver.solve_adjoint(w)
        v /= np.linalg.norm(v)
        if abs(lam - prev) <= tol * lam:
            break
        prev = lam
    else:
        warnings.warn("power iteration hit the iteration cap", RuntimeWarning)
    return float(np.sqrt(lam))
