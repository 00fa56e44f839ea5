"""Sparse signal models, orthonormal sparsity bases and signal statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.fft import dct

from .keystream import BitStream

BASIS_KINDS = ("identity", "dct2", "daubechies4", "random-onb", "file")
ORTHO_TOL = 1e-10

# Daubechies 4-tap orthonormal low-pass analysis filter
_S3 = math.sqrt(3.0)
D4_LOWPASS = np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * math.sqrt(2.0))
D4_HIGHPASS = np.array([D4_LOWPASS[3], -D4_LOWPASS[2], D4_LOWPASS[1], -D4_LOWPASS[0]])


@dataclass(frozen=True)
class OrthonormalBasis:
    """Synthesis basis: ``x = matrix @ s``, columns orthonormal."""

    kind: str
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def synthesize(self, s):
        return self.matrix @ s

    def analyze(self, x):
        return self.matrix.T @ x


def orthonormality_error(d: np.ndarray) -> float:
    """``||D^T D - I||_F / ||I||_F``."""
    n = d.shape[1]
    return float(np.linalg.norm(d.T @ d - np.eye(n)) / math.sqrt(n))


def _d4_step(length: int) -> np.ndarray:
    """One periodised D4 analysis level: approximation rows then detail rows."""
    w = np.zeros((length, length))
    half = length // 2
    for i in range(half):
        for k in range(4):
            col = (2 * i + k) % length
            w[i, col] += D4_LOWPASS[k]
            w[half + i, col] += D4_HIGHPASS[k]
    return w


def daubechies4_matrix(n: int) -> np.ndarray:
    """Full multilevel D4 analysis matrix (periodic boundary), down to 4 samples."""
    if n < 4 or n & (n - 1):
        raise ValueError(f"daubechies4 needs n a power of two >= 4, got {n}")
    w = np.eye(n)
    length = n
    while length >= 4:
        w[:length] = _d4_step(length) @ w[:length]
        length //= 2
    return w


def make_basis(kind: str, n: int, source=None) -> OrthonormalBasis:
    """Build an orthonormal basis.

    ``source`` is the keystream seed for ``random-onb`` and the CSV path
    (``n`` rows by ``n`` columns) for ``file``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "identity":
        d = np.eye(n)
    elif kind == "dct2":
        d = dct(np.eye(n), norm="ortho", axis=0).T
    elif kind == "daubechies4":
        d = daubechies4_matrix(n).T
    elif kind == "random-onb":
        g = BitStream(0 if source is None else int(source)).normals(n * n).reshape(n, n)
        q, r = np.linalg.qr(g)
        d = q * np.sign(np.diag(r))
    elif kind == "file":
        if source is None:
            raise ValueError("file basis needs a path")
        try:
            d = np.loadtxt(source, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ValueError(f"cannot read basis file {source}: {exc}") from exc
        if d.shape != (n, n):
            raise ValueError(f"basis file holds a {d.shape} matrix, expected {(n, n)}")
        err = orthonormality_error(d)
        if err > ORTHO_TOL:
            raise ValueError(f"basis file is not orthonormal (error {err:.3e})")
    else:
        raise ValueError(f"unknown basis kind {kind!r}; choose from {BASIS_KINDS}")
    return OrthonormalBasis(kind, d)


@dataclass(frozen=True)
class SignalModel:
    n: int
    k: int
    basis: OrthonormalBasis
    law: str = "gaussian"  # or "uniform-sign"
    energy: float | None = None  # rescale every plaintext to this energy

    def __post_init__(self):
        if not 0 <= self.k <= self.n:
            raise ValueError(f"sparsity k={self.k} must lie in [0, n={self.n}]")
        if self.basis.n != self.n:
            raise ValueError("basis dimension does not match n")
        if self.law not in ("gaussian", "uniform-sign"):
            raise ValueError(f"unknown coefficient law {self.law!r}")
        if self.energy is not None and self.energy < 0:
            raise ValueError("energy target must be non-negative")


def sample_signal(model: SignalModel, stream: BitStream):
    """Draw ``(x, s, support)`` with ``x = D s`` and ``s`` exactly ``k``-sparse."""
    n, k = model.n, model.k
    perm = np.arange(n)
    for i in range(k):
        j = i + stream.draw_index(n - i)
        perm[i], perm[j] = perm[j], perm[i]
    support = np.sort(perm[:k])
    if model.law == "gaussian":
        coef = stream.normals(k)
    else:
        coef = stream.draw_signs(k).astype(np.float64)
    s = np.zeros(n)
    s[support] = coef
    if model.energy is not None and k > 0:
        s *= math.sqrt(model.energy) / np.linalg.norm(s)
    return model.basis.synthesize(s), s, support


def sphere_uniform(n: int, stream: BitStream, energy: float = 1.0) -> np.ndarray:
    """Uniform point on the sphere of radius ``sqrt(energy)``."""
    g = stream.normals(n)
    return g * (math.sqrt(energy) / np.linalg.norm(g))


def ar1(n: int, pole: float, stream: BitStream) -> np.ndarray:
    """Stationary Gaussian AR(1) path with unit marginal variance."""
    e = stream.normals(n)
    x = np.empty(n)
    x[0] = e[0]
    innov = math.sqrt(1.0 - pole * pole)
    for i in range(1, n):
        x[i] = pole * x[i - 1] + innov * e[i]
    return x


@dataclass(frozen=True)
class SignalStats:
    """Energy moments of a plaintext source.

    ``energy`` is E[sum X^2], ``energy2`` is E[(sum X^2)^2], ``quartic`` is
    E[sum X^4], ``power`` is energy/n and ``fourth_moment_bound`` is
    max_j E[X_j^4]. Standard errors are zero for exact statistics.
    """

    energy: float
    energy2: float
    quartic: float | None = None
    power: float | None = None
    fourth_moment_bound: float | None = None
    trials: int = 0
    energy_se: float = 0.0
    energy2_se: float = 0.0
    quartic_se: float = 0.0
    mixing: tuple | None = None

    @property
    def ratio(self) -> float:
        """``energy2 / energy**2``; at least 1 by Jensen."""
        return self.energy2 / self.energy ** 2

    @classmethod
    def from_ratio(cls, energy: float, ratio: float, quartic: float | None = None) -> "SignalStats":
        return cls(energy, ratio * energy ** 2, quartic)


def sphere_stats(n: int, energy: float = 1.0) -> SignalStats:
    """Exact statistics of the uniform distribution on the sphere of energy ``energy``."""
    quartic = energy ** 2 * 3.0 / (n + 2)
    return SignalStats(energy, energy ** 2, quartic, energy / n, quartic / n)


def estimate_stats(sampler: Callable[[int], np.ndarray], trials: int) -> SignalStats:
    """Monte Carlo energy statistics of ``sampler(i)`` for ``i < trials``."""
    if trials < 2:
        raise ValueError("need at least two trials")
    xs = np.array([np.asarray(sampler(i), dtype=np.float64) for i in range(trials)])
    e = np.sum(xs ** 2, axis=1)
    q = np.sum(xs ** 4, axis=1)
    root = math.sqrt(trials)
    return SignalStats(
        energy=float(e.mean()),
        energy2=float((e ** 2).mean()),
        quartic=float(q.mean()),
        power=float(e.mean()) / xs.shape[1],
        fourth_moment_bound=float((xs ** 4).mean(axis=0).max()),
        trials=trials,
        energy_se=float(e.std(ddof=1)) / root,
        energy2_se=float((e ** 2).std(ddof=1)) / root,
        quartic_se=float(q.std(ddof=1)) / root,
    )


def ingest_csv(path, n: int) -> np.ndarray:
    """Cut a single-column sample file into non-overlapping windows of ``n``.

    Returns an array of shape ``(windows, n)``; an incomplete tail is dropped.
    """
    text = Path(path).read_text()
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 1:
            raise ValueError(f"{path}:{lineno}: expected one column, found {len(fields)}")
        try:
            values.append(float(fields[0]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: not a number: {fields[0]!r}") from exc
    if not values:
        raise ValueError(f"{path}: no samples")
    data = np.asarray(values)
    count = len(data) // n
    return data[: count * n].reshape(count, n)


def write_corpus(path, windows: np.ndarray) -> None:
    """Inverse of :func:`ingest_csv`: one sample per line."""
    with open(path, "w") as fh:
        for v in np.asarray(windows).reshape(-1):
            fh.write(f"{float(v)!r}\n")
