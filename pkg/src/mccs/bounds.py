"""Second-class recovery-error bounds.

Closed forms for the guaranteed error of a decoder that only knows
``A0`` while the ciphertext was produced with ``A1 = A0 + dA``, the
Chebyshev probability with which that guarantee holds, a RIP-based upper
bound with Monte Carlo estimates of its constants, and the practical
ARSNR bracket used to read recovery experiments.

Monte Carlo estimators here draw from numpy ``Generator`` streams seeded
by the caller; cipher artifacts (the matrices themselves) always come
from the keyed SplitMix64 streams of :mod:`mccs.sensing`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics
from .errors import InapplicableBoundError, ShapeMismatchError
from .keystream import KeyChain
from .recovery import RSNR_CAP_DB
from .sensing import EncodingMatrix, PerturbationMatrix, fmt_float, gen_matrix, perturbation_between
from .signals import OrthonormalBasis, SignalStats

EPS_MAX = 2.0 ** 0.25 - 1.0


@dataclass(frozen=True)
class PerturbationRegime:
    m: int
    n: int
    eta: float
    theta: float = 0.5

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 < self.eta <= 0.5:
            raise ValueError(f"flip density must lie in (0, 1/2], got {self.eta}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")

    @property
    def q(self) -> float:
        return self.m / self.n


@dataclass(frozen=True)
class RicEstimate:
    """Empirical restricted-isometry figures over random ``k``-column supports.

    Singular values refer to ``A1 D / sqrt(m)``; ``eps`` is the ratio of
    the largest ``dA D`` and ``A1 D`` submatrix singular values.
    """

    k: int
    sigma_min: float
    sigma_max: float
    delta: float
    eps: float
    trials: int


@dataclass(frozen=True)
class BoundReport:
    lb_error_norm: float
    zeta: float
    asymptotic_lb_power: float
    lb_arsnr_db: float
    ub_arsnr_db: float
    ub_error_norm: float | None = None
    constants: dict = field(default_factory=dict)


def to_db(error_energy: float, signal_energy: float = 1.0) -> float:
    """``-10 log10`` of the error-to-signal energy ratio."""
    if error_energy <= 0:
        return RSNR_CAP_DB
    return -10.0 * math.log10(error_energy / signal_energy)


def zeta(m: int, eta: float, theta: float, ratio: float) -> float:
    """Probability that the squared perturbation energy clears ``theta`` times its mean.

    ``ratio`` is ``E[(sum X^2)^2] / E[sum X^2]^2``.
    """
    spread = (1.0 + (1.0 / m) * (3.0 / (2.0 * eta) - 1.0)) * ratio - 1.0
    return 1.0 / (1.0 + spread / (1.0 - theta) ** 2)


def theorem1_lb(regime: PerturbationRegime, stats: SignalStats,
                sigma_max_a0: float | None = None) -> tuple[float, float]:
    """Lower bound on ``||x_hat - x||^2`` and the probability ``zeta`` it holds with.

    ``sigma_max_a0`` defaults to the large-matrix asymptote ``sqrt(m) + sqrt(n)``.
    """
    if stats.energy <= 0:
        raise ValueError("plaintext energy must be positive")
    m, eta, theta = regime.m, regime.eta, regime.theta
    s = math.sqrt(m) + math.sqrt(regime.n) if sigma_max_a0 is None else float(sigma_max_a0)
    if s <= 0:
        raise ValueError("sigma_max(A0) must be positive")
    bound = 4.0 * eta * m * stats.energy * theta / s ** 2
    return bound, zeta(m, eta, theta, stats.ratio)


def corollary1_lb(q: float, eta: float, power: float, theta: float) -> float:
    """Asymptotic lower bound on the recovery error power."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    if not 0.0 <= eta <= 0.5:
        raise ValueError(f"flip density must lie in [0, 1/2], got {eta}")
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if power < 0:
        raise ValueError("signal power must be non-negative")
    return 4.0 * eta * q * power * theta / (1.0 + math.sqrt(q)) ** 2


def practical_ub_arsnr(m: int, n: int, eta: float) -> float:
    """ARSNR ceiling in dB for second-class recovery."""
    if eta <= 0:
        raise ValueError("the upper bound needs eta > 0")
    return -10.0 * math.log10(4.0 * eta * m / (math.sqrt(m) + math.sqrt(n)) ** 2)


# -- perturbation energy Monte Carlo ------------------------------------------

def _sphere_batch(rng, count, n):
    g = rng.standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def perturbation_energy_samples(m: int, n: int, eta: float, trials: int, seed: int = 0,
                                xi: np.ndarray | None = None, batch: int = 64):
    """Draws of ``||dA xi||^2`` with i.i.d. entries of ``dA`` in ``{-2, 0, 2}``.

    Each entry is ``+-2`` with probability ``eta/2`` apiece. ``xi`` is a
    fixed vector, or fresh sphere-uniform unit vectors when ``None``.
    Returns ``(values, energies)`` where ``energies[i] = ||xi_i||^2``.
    """
    rng = np.random.default_rng(seed)
    vals = np.empty(trials)
    energies = np.empty(trials)
    half = np.float32(eta / 2)
    full = np.float32(eta)
    for lo in range(0, trials, batch):
        c = min(batch, trials - lo)
        u = rng.random((c, m, n), dtype=np.float32)
        d = 2.0 * (u < full).astype(np.float32) - 4.0 * (u < half).astype(np.float32)
        if xi is None:
            x = _sphere_batch(rng, c, n)
        else:
            x = np.broadcast_to(np.asarray(xi, dtype=np.float64), (c, n))
        r = np.einsum("bmn,bn->bm", d, x.astype(np.float32), dtype=np.float64)
        vals[lo:lo + c] = np.sum(r * r, axis=1)
        energies[lo:lo + c] = np.sum(x * x, axis=1)
    return vals, energies


def exceedance_rate(values: np.ndarray, regime: PerturbationRegime, stats: SignalStats) -> float:
    """Fraction of ``values`` at or above ``4 m eta E theta``."""
    threshold = 4.0 * regime.m * regime.eta * stats.energy * regime.theta
    return float(np.mean(np.asarray(values) >= threshold))


def lemma1_probability_check(regime: PerturbationRegime, stats: SignalStats, trials: int,
                             seed: int = 0, xi: np.ndarray | None = None) -> float:
    """Empirical probability that ``||dA xi||^2`` clears the lower-bound threshold ``4 m eta E theta``."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    values, _ = perturbation_energy_samples(regime.m, regime.n, regime.eta, trials, seed, xi)
    return exceedance_rate(values, regime, stats)


def lemma1_second_moment_oracle(m: int, eta: float, stats: SignalStats) -> float:
    """``E[||dA xi||^4]`` for i.i.d. ``dA`` of density ``eta``."""
    if stats.quartic is None:
        raise ValueError("second moment needs E[sum xi^4]")
    f, g = stats.energy2, stats.quartic
    return 16.0 * m * eta * (eta * (m - 1) * f + 3.0 * eta * (f - g) + g)


# -- RIP constants ---------------------------------------------------------------

def _random_supports(rng, n, k, trials):
    return np.argsort(rng.random((trials, n)), axis=1)[:, :k]


def _extreme_singulars(cols: np.ndarray, supports: np.ndarray, chunk: int = 128):
    """Min and max singular value of ``cols[:, S]`` over the supports ``S``."""
    lo, hi = math.inf, 0.0
    ct = cols.T
    for start in range(0, len(supports), chunk):
        sub = ct[supports[start:start + chunk]]  # (c, k, m)
        ev = np.linalg.eigvalsh(sub @ sub.transpose(0, 2, 1))
        ev = np.clip(ev, 0.0, None)
        lo = min(lo, float(np.sqrt(ev[:, 0].min())))
        hi = max(hi, float(np.sqrt(ev[:, -1].max())))
    return lo, hi


def estimate_ric_constants(a1, da, basis: OrthonormalBasis | None, k: int, trials: int,
                           seed: int = 0) -> tuple[RicEstimate, RicEstimate]:
    """Monte Carlo ``(k, 2k)`` restricted-isometry figures of ``A1 D`` and ``dA D``."""
    a1 = numerics.as_dense(a1)
    d = numerics.as_dense(da)
    m, n = a1.shape
    if d.shape != a1.shape:
        raise ShapeMismatchError(f"{a1.shape} vs {d.shape}")
    if k < 1 or 2 * k > m:
        raise ValueError(f"need 1 <= k and 2k <= m, got k={k}, m={m}")
    if trials < 100:
        raise ValueError("need at least 100 trials")
    scale = 1.0 / math.sqrt(m)
    p = a1 * scale if basis is None else (a1 @ basis.matrix) * scale
    q = -d * scale if basis is None else (-d @ basis.matrix) * scale
    rng = np.random.default_rng(seed)
    out = []
    for kk in (k, 2 * k):
        supports = _random_supports(rng, n, kk, trials)
        smin, smax = _extreme_singulars(p, supports)
        _, pmax = _extreme_singulars(q, supports) if np.any(d) else (0.0, 0.0)
        delta = max(smax ** 2 - 1.0, 1.0 - smin ** 2)
        out.append(RicEstimate(kk, smin, smax, delta, pmax / smax, trials))
    return out[0], out[1]


def delta_2k_max(eps_2k: float) -> float:
    """Largest admissible ``delta(2k)`` given ``eps(2k)``."""
    return math.sqrt(2.0) / (1.0 + eps_2k) ** 2 - 1.0


def proposition1_ub(est_k: RicEstimate, est_2k: RicEstimate, y_norm: float):
    """``(gamma, C, C * gamma)`` of the RIP-based upper bound on ``||x_hat - x||``.

    Raises :class:`InapplicableBoundError` when the constants violate the
    hypotheses (``eps(2k) < 2^(1/4) - 1`` and ``delta(2k) < delta_max``).
    """
    e2, d2 = est_2k.eps, est_2k.delta
    if e2 >= EPS_MAX:
        raise InapplicableBoundError(f"eps(2k) = {e2:.4f} >= 2^(1/4) - 1")
    if d2 >= delta_2k_max(e2):
        raise InapplicableBoundError(f"delta(2k) = {d2:.4f} >= {delta_2k_max(e2):.4f}")
    if est_k.delta >= 1.0:
        raise InapplicableBoundError(f"delta(k) = {est_k.delta:.4f} >= 1")
    gamma = est_k.eps * math.sqrt((1.0 + est_k.delta) / (1.0 - est_k.delta)) * y_norm
    c = 4.0 * math.sqrt(1.0 + d2) * (1.0 + e2) / (
        1.0 - (math.sqrt(2.0) + 1.0) * ((1.0 + d2) * (1.0 + e2) ** 2 - 1.0))
    return gamma, c, c * gamma


# -- practical criteria ------------------------------------------------------------

def pinv_gain_samples(m: int, n: int, eta: float, trials: int, seed: int = 0) -> np.ndarray:
    """``sigma_max(pinv(A0) dA)`` over fresh keyed frames."""
    keys = KeyChain.derive(2, seed)
    out = np.empty(trials)
    for i in range(trials):
        a0 = gen_matrix(keys, 0, m, n, i)
        a1 = gen_matrix(keys, 1, m, n, i, (eta,))
        out[i] = numerics.sigma_max_pinv_product(a0, perturbation_between(a0, a1).entries)
    return out


def practical_lb_arsnr(m: int, n: int, eta: float, trials: int, seed: int = 0) -> float:
    """ARSNR floor in dB: ``-10 log10 mean(sigma_max(pinv(A0) dA)^2)``."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if eta == 0:
        return RSNR_CAP_DB
    g = pinv_gain_samples(m, n, eta, trials, seed)
    return -10.0 * math.log10(float(np.mean(g ** 2)))


def naive_second_class_error(a0, da, x):
    """Least-squares estimate ``pinv(A0) dA x`` of the second-class error and its dB proxy."""
    a0 = numerics.as_dense(a0)
    d = numerics.as_dense(da)
    x = np.asarray(x, dtype=np.float64)
    if d.shape != a0.shape or x.shape != (a0.shape[1],):
        raise ShapeMismatchError(f"A0 {a0.shape}, dA {d.shape}, x {x.shape}")
    dx = numerics.MinNormSolver(a0).solve(d @ x)
    err = float(dx @ dx)
    sig = float(x @ x)
    if sig == 0.0:
        raise ValueError("reference signal is zero")
    return dx, (RSNR_CAP_DB if err == 0.0 else min(-10.0 * math.log10(err / sig), RSNR_CAP_DB))


# -- sweeps ------------------------------------------------------------------------

def bound_report(regime: PerturbationRegime, stats: SignalStats, lb_trials: int = 100,
                 seed: int = 0, ric: tuple[RicEstimate, RicEstimate] | None = None,
                 sigma_max_a0: float | None = None) -> BoundReport:
    m, n, eta = regime.m, regime.n, regime.eta
    lb, z = theorem1_lb(regime, stats, sigma_max_a0)
    power = stats.power if stats.power is not None else stats.energy / n
    constants = {}
    ub_norm = None
    if ric is not None:
        est_k, est_2k = ric
        constants = {
            "eps_k": est_k.eps, "eps_2k": est_2k.eps, "delta_k": est_k.delta,
            "delta_2k": est_2k.delta, "delta_2k_max": delta_2k_max(est_2k.eps),
        }
        try:
            gamma, c, ub_norm = proposition1_ub(est_k, est_2k, math.sqrt(m * stats.energy))
            constants.update(C=c, gamma=gamma)
        except InapplicableBoundError:
            ub_norm = None
    return BoundReport(
        lb_error_norm=lb,
        zeta=z,
        asymptotic_lb_power=corollary1_lb(regime.q if m <= n else 1.0, eta, power, regime.theta),
        lb_arsnr_db=practical_lb_arsnr(m, n, eta, lb_trials, seed),
        ub_arsnr_db=practical_ub_arsnr(m, n, eta),
        ub_error_norm=ub_norm,
        constants=constants,
    )


SWEEP_COLUMNS = ("eta", "lb_arsnr_db", "ub_arsnr_db", "zeta", "theorem1_lb", "ub_applicable", "ub_value")


def bound_sweep(m: int, n: int, etas: Sequence[float], theta: float, stats: SignalStats,
                lb_trials: int = 100, seed: int = 0, k: int | None = None,
                basis: OrthonormalBasis | None = None, ric_trials: int = 1000,
                progress: Callable[[float], None] | None = None) -> list[dict]:
    """One row per ``eta``; RIP upper-bound columns only when ``k`` is given.

    ``ub_value`` is the RIP bound on ``||x_hat - x||`` for a plaintext of
    energy ``stats.energy``, taking ``||y|| = sqrt(m E)``.
    """
    if not etas:
        raise ValueError("eta grid is empty")
    keys = KeyChain.derive(2, seed)
    rows = []
    for eta in etas:
        regime = PerturbationRegime(m, n, eta, theta)
        ric = None
        if k is not None:
            a0 = gen_matrix(keys, 0, m, n, 0)
            a1 = gen_matrix(keys, 1, m, n, 0, (eta,))
            ric = estimate_ric_constants(a1, perturbation_between(a0, a1), basis, k, ric_trials, seed)
        rep = bound_report(regime, stats, lb_trials, seed, ric)
        rows.append({
            "eta": eta, "lb_arsnr_db": rep.lb_arsnr_db, "ub_arsnr_db": rep.ub_arsnr_db,
            "zeta": rep.zeta, "theorem1_lb": rep.lb_error_norm,
            "ub_applicable": rep.ub_error_norm is not None, "ub_value": rep.ub_error_norm,
        })
        if progress:
            progress(eta)
    return rows


def write_sweep(path, rows: Sequence[dict], preamble: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([
                fmt_float(r["eta"]), fmt_float(r["lb_arsnr_db"]), fmt_float(r["ub_arsnr_db"]),
                fmt_float(r["zeta"]), fmt_float(r["theorem1_lb"]), int(r["ub_applicable"]),
                "" if r["ub_value"] is None else fmt_float(r["ub_value"]),
            ])
