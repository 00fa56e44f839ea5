"""Statistical cryptanalysis of single-row Bernoulli encodings.

Three experiments live here: a two-level Kolmogorov-Smirnov
distinguishing attack between plaintexts of chosen energies, a
Gaussianity check of the ciphertext marginal, and an estimate of how
fast that marginal approaches its normal limit as ``n`` grows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import keystream
from .keystream import BitStream
from .sensing import encode_single_rows, fmt_float
from .signals import sphere_uniform

SIGNIFICANCE = 0.05
SERIES_TOL = 1e-10
DESK_CHI = 50_000
DESK_P = 200
DESK_R = 100_000
MAX_BINS = 4096


@dataclass(frozen=True)
class CiphertextSample:
    values: np.ndarray
    energy: float
    n: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("ciphertext sample holds non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class KsOutcome:
    statistic: float
    p_value: float
    sizes: tuple


@dataclass(frozen=True)
class AttackReport:
    e1: float
    e2: float
    n: int
    chi: int
    P: int
    p_values: list
    second_level_p: float

    @property
    def verdict(self) -> str:
        return "distinguishable" if self.second_level_p < SIGNIFICANCE else "indistinguishable"

    def to_dict(self) -> dict:
        return {
            "e1": self.e1, "e2": self.e2, "n": self.n, "chi": self.chi, "P": self.P,
            "p_values": list(self.p_values), "second_level_p": self.second_level_p,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class ConvergenceReport:
    n_grid: tuple
    deviations: dict  # n -> array of per-plaintext deviations
    c_rho: dict  # rho -> C(rho)
    slope: float | None
    bins: int = 0
    rows: int = 0
    medians: dict = field(default_factory=dict)


def kolmogorov_sf(lam: float) -> float:
    """``P(K > lam)`` for the Kolmogorov distribution.

    The alternating series ``2 sum (-1)^(j-1) exp(-2 j^2 lam^2)`` is used
    for ``lam >= 1``; below that it cancels badly, and the complementary
    theta-function form ``sqrt(2 pi)/lam sum exp(-(2j-1)^2 pi^2 / (8 lam^2))``
    of the CDF is summed instead. Both stop once a term drops under 1e-10.
    """
    if lam <= 0:
        return 1.0
    if lam >= 1.0:
        total, j = 0.0, 1
        while True:
            term = math.exp(-2.0 * j * j * lam * lam)
            total += term if j % 2 else -term
            if term < SERIES_TOL:
                break
            j += 1
        return min(max(2.0 * total, 0.0), 1.0)
    total, j = 0.0, 1
    c = math.pi ** 2 / (8.0 * lam * lam)
    while True:
        term = math.exp(-(2 * j - 1) ** 2 * c)
        total += term
        if term < SERIES_TOL:
            break
        j += 1
    return min(max(1.0 - math.sqrt(2.0 * math.pi) / lam * total, 0.0), 1.0)


def _values(s) -> np.ndarray:
    v = s.values if isinstance(s, CiphertextSample) else np.asarray(s, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty sample")
    return v


def ks_two_sample(a, b) -> KsOutcome:
    """Two-sample KS statistic with its asymptotic p-value."""
    xa = np.sort(_values(a))
    xb = np.sort(_values(b))
    na, nb = len(xa), len(xb)
    pooled = np.concatenate([xa, xb])
    fa = np.searchsorted(xa, pooled, side="right") / na
    fb = np.searchsorted(xb, pooled, side="right") / nb
    d = float(np.max(np.abs(fa - fb)))
    lam = d * math.sqrt(na * nb / (na + nb))
    return KsOutcome(d, kolmogorov_sf(lam), (na, nb))


def ks_one_sample(values, cdf) -> KsOutcome:
    """One-sample KS against a continuous ``cdf`` (vectorised callable)."""
    x = np.sort(_values(values))
    k = len(x)
    f = cdf(x)
    i = np.arange(1, k + 1)
    d = float(max(np.max(i / k - f), np.max(f - (i - 1) / k)))
    return KsOutcome(d, kolmogorov_sf(d * math.sqrt(k)), (k,))


def ks_uniformity(p_values) -> KsOutcome:
    """Second-level test: are the first-level p-values uniform on [0, 1]?"""
    p = np.asarray(p_values, dtype=np.float64)
    if len(p) < 20:
        raise ValueError("uniformity test needs at least 20 p-values")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    return ks_one_sample(p, lambda t: t)


def collect_ciphertexts(x, chi: int, seed: int) -> CiphertextSample:
    """``chi`` scaled measurements of ``x``, each under a fresh one-row matrix."""
    x = np.asarray(x, dtype=np.float64)
    if chi < 1:
        raise ValueError("chi must be positive")
    y = encode_single_rows(x, seed, np.arange(chi, dtype=np.uint64), scaled=True)
    return CiphertextSample(y, float(x @ x), len(x))


def orthogonal_pair(n: int, e1: float, e2: float, seed: int):
    """Two orthogonal plaintexts of energies ``e1`` and ``e2``."""
    if n < 2:
        raise ValueError("orthogonal pairs need n >= 2")
    stream = BitStream(seed)
    u = sphere_uniform(n, stream)
    v = sphere_uniform(n, stream)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    return math.sqrt(e1) * u, math.sqrt(e2) * v


def distinguishing_attack(e1: float, e2: float, n: int, chi: int = DESK_CHI, P: int = DESK_P,
                          seed: int = 0) -> AttackReport:
    """Two-level KS attack on ciphertexts of orthogonal plaintexts with energies ``e1, e2``.

    Repetition ``r`` uses words ``3r .. 3r+2`` of ``expand(seed)`` as the
    plaintext seed and the two matrix seeds.
    """
    if e1 <= 0 or e2 <= 0:
        raise ValueError("energies must be positive")
    sub = keystream.words(seed, 0, 3 * P).reshape(P, 3)
    pvals = []
    for r in range(P):
        ps, s1, s2 = (int(v) for v in sub[r])
        x1, x2 = orthogonal_pair(n, e1, e2, ps)
        out = ks_two_sample(collect_ciphertexts(x1, chi, s1), collect_ciphertexts(x2, chi, s2))
        pvals.append(out.p_value)
    second = ks_uniformity(pvals)
    return AttackReport(float(e1), float(e2), n, chi, P, pvals, second.p_value)


def gaussianity_check(x, chi: int, seed: int) -> KsOutcome:
    """KS distance of the ciphertext marginal from ``N(0, ||x||^2 / n)``."""
    if chi < 10_000:
        raise ValueError("chi must be at least 10^4")
    sample = collect_ciphertexts(x, chi, seed)
    sd = math.sqrt(sample.energy / sample.n)
    if sd == 0:
        raise ValueError("plaintext is zero")
    return ks_one_sample(sample, lambda t: ndtr(t / sd))


def bin_deviation(y: np.ndarray, energy: float, bins: int) -> float:
    """Largest gap between the empirical and ``N(0, energy)`` mass over equiprobable bins."""
    edges = math.sqrt(energy) * ndtri(np.arange(1, bins) / bins)
    counts = np.bincount(np.searchsorted(edges, y, side="right"), minlength=bins)
    return float(np.max(np.abs(counts / len(y) - 1.0 / bins)))


def estimate_convergence_constant(n_grid: Sequence[int], plaintexts: int = 100,
                                  rows: int = DESK_R, rhos: Sequence[float] = (1e-3,),
                                  seed: int = 0) -> ConvergenceReport:
    """Per-plaintext deviation of the measurement law from its normal limit.

    For every ``n`` and each of ``plaintexts`` unit-energy sphere-uniform
    plaintexts, ``rows`` unscaled one-row measurements are binned into
    ``min(4096, rows // 100)`` intervals equiprobable under ``N(0, 1)``.
    ``C(rho)`` is the largest, over the grid, ``(1 - rho)``-quantile of
    ``n * deviation``; ``slope`` fits ``log(median deviation)`` against ``log n``.
    """
    grid = tuple(int(v) for v in n_grid)
    if not grid:
        raise ValueError("n grid is empty")
    if plaintexts < 1 or rows < 100:
        raise ValueError("need at least one plaintext and 100 rows")
    bins = min(MAX_BINS, rows // 100)
    devs = {}
    for n in grid:
        base = keystream.frame_seed(seed, n)
        sub = keystream.words(base, 0, 2 * plaintexts).reshape(plaintexts, 2)
        d = np.empty(plaintexts)
        for j in range(plaintexts):
            x = sphere_uniform(n, BitStream(int(sub[j, 0])))
            y = encode_single_rows(x, int(sub[j, 1]), np.arange(rows, dtype=np.uint64))
            d[j] = bin_deviation(y, 1.0, bins)
        devs[n] = d
    c_rho = {}
    for rho in rhos:
        if not 0 < rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        c_rho[float(rho)] = max(float(np.quantile(n * devs[n], 1.0 - rho)) for n in grid)
    medians = {n: float(np.median(devs[n])) for n in grid}
    slope = None
    if len(grid) >= 2:
        slope = float(np.polyfit(np.log(grid), np.log([medians[n] for n in grid]), 1)[0])
    return ConvergenceReport(grid, devs, c_rho, slope, bins, rows, medians)


def write_attack_json(path, report: AttackReport, provenance: dict | None = None) -> None:
    data = report.to_dict()
    if provenance is not None:
        data["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def write_convergence(csv_path, json_path, report: ConvergenceReport,
                      provenance: dict | None = None) -> None:
    """Per-plaintext deviations as CSV plus a JSON summary of ``C(rho)`` and the slope."""
    preamble = [] if provenance is None else [f"# {json.dumps(provenance, sort_keys=True)}"]
    with open(csv_path, "w", newline="") as fh:
        for line in preamble:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n", "plaintext_id", "deviation"))
        for n in report.n_grid:
            for j, d in enumerate(report.deviations[n]):
                w.writerow((n, j, fmt_float(d)))
    summary = {
        "rho": list(report.c_rho),
        "C_rho": list(report.c_rho.values()),
        "slope": report.slope,
        "median_deviation": {str(n): v for n, v in report.medians.items()},
        "bins": report.bins,
        "rows": report.rows,
    }
    if provenance is not None:
        summary["provenance"] = provenance
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
