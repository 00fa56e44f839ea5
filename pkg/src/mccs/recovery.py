"""Sparse recovery for class decoders: basis pursuit (denoising) and CoSaMP."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numerics
from .sensing import EncodingMatrix, MeasurementFrame, fmt_float
from .signals import OrthonormalBasis

RSNR_CAP_DB = 300.0
GAMMA_FLOOR = 1e-6
RESIDUAL_TOL = 1e-3
INNER_TOL = 1e-8
INNER_MAX_ITER = 5000
BISECTION_MAX_STEPS = 60


@dataclass(frozen=True)
class RecoveryProblem:
    """Decoder view: measurements, believed matrix, basis, noise radius, sparsity hint."""

    y: np.ndarray
    a: np.ndarray
    basis: OrthonormalBasis | None = None
    gamma: float = 0.0
    k: int | None = None
    scaled: bool = False

    def __post_init__(self):
        y = self.y.y if isinstance(self.y, MeasurementFrame) else self.y
        a = self.a.entries if isinstance(self.a, EncodingMatrix) else self.a
        object.__setattr__(self, "y", np.asarray(y, dtype=np.float64))
        object.__setattr__(self, "a", np.asarray(a, dtype=np.float64))
        if self.a.ndim != 2 or self.a.shape[0] != len(self.y):
            raise ValueError(f"matrix {self.a.shape} does not match {len(self.y)} measurements")
        if self.basis is not None and self.basis.n != self.a.shape[1]:
            raise ValueError("basis dimension does not match matrix columns")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and non-negative")

    @classmethod
    def from_frame(cls, frame: MeasurementFrame, a, basis=None, gamma=0.0, k=None):
        return cls(frame.y, a, basis, gamma, k, frame.scaled)

    def operator(self) -> np.ndarray:
        """Effective dictionary ``A D`` (with the 1/sqrt(n) factor for scaled frames)."""
        phi = self.a if self.basis is None else self.a @ self.basis.matrix
        if self.scaled:
            phi = phi / math.sqrt(self.a.shape[1])
        return phi

    def synthesize(self, s: np.ndarray) -> np.ndarray:
        return s if self.basis is None else self.basis.synthesize(s)


@dataclass(frozen=True)
class RecoveryResult:
    x_hat: np.ndarray
    s_hat: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _result(p: RecoveryProblem, phi, s, iterations, converged) -> RecoveryResult:
    residual = float(np.linalg.norm(p.y - phi @ s))
    return RecoveryResult(p.synthesize(s), s, iterations, residual, converged)


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_fista(phi, y, lam, step, x0=None, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
    """Minimise ``0.5||y - phi x||^2 + lam ||x||_1`` by FISTA with adaptive restart.

    Returns ``(x, iterations, converged)``; stops when the relative iterate
    change drops below ``tol``.
    """
    x = np.zeros(phi.shape[1]) if x0 is None else x0.copy()
    z = x.copy()
    t = 1.0
    thresh = lam * step
    for it in range(1, max_iter + 1):
        grad = phi.T @ (phi @ z - y)
        x_new = soft_threshold(z - step * grad, thresh)
        dx = x_new - x
        if np.dot(z - x_new, dx) > 0:  # restart momentum when it points uphill
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * dx
        x, t = x_new, t_new
        if np.linalg.norm(dx) <= tol * max(np.linalg.norm(x), 1e-300):
            return x, it, True
    return x, max_iter, False


def _polish(phi, y, s, target):
    """Least squares restricted to the support of ``s``; exact-constraint refinement."""
    support = np.flatnonzero(s)
    if support.size == 0 or support.size > phi.shape[0]:
        return None
    coef = numerics.lstsq(phi[:, support], y)
    out = np.zeros_like(s)
    out[support] = coef
    if np.linalg.norm(y - phi @ out) > target:
        return None
    return out


def solve_bpdn(p: RecoveryProblem) -> RecoveryResult:
    """``min ||s||_1`` s.t. ``||y - A D s||_2 <= gamma``.

    The penalised problem is solved by FISTA. ``lambda`` starts at
    ``lambda_max = ||(AD)^T y||_inf`` and is halved (warm-started) until
    the residual falls to the target radius, then bisected geometrically
    inside the last bracket (never below ``1e-12 * lambda_max``) until the
    residual lands within ``1e-3 ||y||`` below, and ``1e-3 gamma`` above,
    the target. With ``gamma = 0`` the target is ``1e-6 ||y||`` and the
    last iterate is refined by least squares on its support so that the
    equality constraint holds.
    """
    phi = p.operator()
    n = phi.shape[1]
    ynorm = float(np.linalg.norm(p.y))
    if ynorm == 0.0 or p.gamma >= ynorm:
        return _result(p, phi, np.zeros(n), 0, True)
    target = max(p.gamma, GAMMA_FLOOR * ynorm)
    lower = target - RESIDUAL_TOL * ynorm
    upper = target + min(RESIDUAL_TOL * ynorm, RESIDUAL_TOL * p.gamma) if p.gamma > 0 else lower + 2 * RESIDUAL_TOL * ynorm
    step = 1.0 / numerics.sigma_max(phi) ** 2
    lam_max = float(np.max(np.abs(phi.T @ p.y)))
    lam_min = 1e-12 * lam_max
    total = 0
    inner_ok = True
    hit = False
    best = None

    def attempt(lam, start):
        nonlocal total, inner_ok, best
        sol, its, inner_ok = lasso_fista(phi, p.y, lam, step, x0=start)
        total += its
        res = float(np.linalg.norm(p.y - phi @ sol))
        if res <= upper and (best is None or res > best[1]):
            best = (sol.copy(), res)
        return sol, res

    # continuation: halve lambda with warm starts until the residual drops under the
    # upper edge, which brackets the target far better than a cold log-midpoint
    s_hi = np.zeros(n)
    lam_hi = lam_max
    lam = lam_max
    s = s_hi
    while True:
        lam = max(0.5 * lam, lam_min)
        s, res = attempt(lam, s_hi)
        if lower <= res <= upper:
            hit = True
            break
        if res < lower or lam == lam_min:
            break
        s_hi, lam_hi = s, lam
    lam_lo = lam
    for _ in range(BISECTION_MAX_STEPS if not hit else 0):
        if lam_lo == lam_min and res > upper:
            break
        lam = math.sqrt(lam_lo * lam_hi)
        s, res = attempt(lam, s_hi)
        if lower <= res <= upper:
            hit = True
            break
        if res > upper:
            lam_hi, s_hi = lam, s
        else:
            lam_lo = lam
    if not hit and best is not None:
        s = best[0]
    if p.gamma == 0.0:
        polished = _polish(phi, p.y, s, target)
        if polished is not None:
            return _result(p, phi, polished, total, inner_ok)
        return _result(p, phi, s, total, False)
    return _result(p, phi, s, total, hit and inner_ok)


def _top_indices(v: np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` largest ``|v|``; lower index wins ties."""
    order = np.argsort(-np.abs(v), kind="stable")
    return order[:count]


def solve_cosamp(p: RecoveryProblem, max_iter: int = 200, tol: float = 1e-6) -> RecoveryResult:
    """CoSaMP initialised with the exact sparsity ``p.k``."""
    phi = p.operator()
    m, n = phi.shape
    k = p.k
    if k is None:
        raise ValueError("CoSaMP needs the sparsity level k")
    if not 1 <= k <= m / 3:
        raise ValueError(f"CoSaMP needs 1 <= k <= m/3, got k={k}, m={m}")
    ynorm = float(np.linalg.norm(p.y))
    s = np.zeros(n)
    if ynorm == 0.0:
        return _result(p, phi, s, 1, True)
    support = np.zeros(0, dtype=np.intp)
    r = p.y.copy()
    rnorm = ynorm
    for it in range(1, max_iter + 1):
        proxy = phi.T @ r
        merged = np.union1d(_top_indices(proxy, 2 * k), support)
        b = np.zeros(n)
        b[merged] = numerics.lstsq(phi[:, merged], p.y)
        support = np.sort(_top_indices(b, k))
        s = np.zeros(n)
        s[support] = b[support]
        r = p.y - phi @ s
        new_norm = float(np.linalg.norm(r))
        if abs(rnorm - new_norm) < tol * ynorm:
            return _result(p, phi, s, it, True)
        rnorm = new_norm
    return _result(p, phi, s, max_iter, False)


def rsnr(x, x_hat) -> float:
    """Recovery SNR in dB, capped at 300 dB."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("x and x_hat differ in length")
    sig = float(x @ x)
    if sig == 0.0:
        raise ValueError("reference signal is zero")
    err = float(np.sum((x - x_hat) ** 2))
    if err == 0.0:
        return RSNR_CAP_DB
    return min(10.0 * math.log10(sig / err), RSNR_CAP_DB)


def arsnr(pairs: Iterable[tuple]) -> float:
    """``10 log10`` of the sample mean of per-pair SNR ratios."""
    ratios = [10.0 ** (rsnr(x, xh) / 10.0) for x, xh in pairs]
    if not ratios:
        raise ValueError("no pairs to average")
    return 10.0 * math.log10(sum(ratios) / len(ratios))


RESULT_COLUMNS = ("frame_index", "class", "eta", "rsnr_db", "iterations", "residual", "converged")


def write_results(path, rows: Sequence[dict], preamble: Sequence[str] = ()) -> None:
    """Result CSV; ``rsnr_db`` is left empty when no ground truth was given."""
    with open(path, "w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([
                r["frame_index"], r["class"], fmt_float(r["eta"]),
                "" if r.get("rsnr_db") is None else fmt_float(r["rsnr_db"]),
                r["iterations"], fmt_float(r["residual"]), int(bool(r["converged"])),
            ])
