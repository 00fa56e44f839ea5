"""Class-``u`` encoding matrices, sign-flip chains and encoding.

``A0`` is a dense +/-1 matrix filled row-major from the frame stream of
the matrix seed (bit 0 -> +1). Class ``u`` flips the signs on disjoint
index sets ``C0 .. C(u-1)``, each drawn from the frame stream of the
corresponding flip seed, so ``A(u+1) = A(u) + dA`` with ``dA`` equal to
``-2 A(u)`` on ``C(u)`` and zero elsewhere.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import keystream
from .errors import KeyDeficitError, ShapeMismatchError
from .keystream import BitStream, KeyChain

MAX_ENTRIES = 1 << 26


@dataclass(frozen=True)
class EncodingMatrix:
    entries: np.ndarray  # int8, values in {-1, +1}
    class_level: int = 0
    frame_index: int = 0

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    def astype(self, dtype=np.float64) -> np.ndarray:
        return self.entries.astype(dtype)


@dataclass(frozen=True)
class FlipSet:
    level: int
    m: int
    n: int
    flat: np.ndarray  # row-major positions, in draw order

    @property
    def cardinality(self) -> int:
        return len(self.flat)

    @property
    def density(self) -> float:
        return self.cardinality / (self.m * self.n)

    @property
    def positions(self) -> set:
        rows, cols = np.divmod(self.flat, self.n)
        return set(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True)
class PerturbationMatrix:
    entries: np.ndarray  # int8, values in {-2, 0, +2}
    level: int = 0

    @property
    def shape(self):
        return self.entries.shape

    def astype(self, dtype=np.float64) -> np.ndarray:
        return self.entries.astype(dtype)


@dataclass(frozen=True)
class MeasurementFrame:
    y: np.ndarray
    frame_index: int = 0
    scaled: bool = False

    @property
    def m(self) -> int:
        return len(self.y)


def flip_count(eta: float, m: int, n: int) -> int:
    """Number of flipped entries, ``round(eta*m*n)`` with halves away from zero."""
    if not 0.0 <= eta <= 0.5:
        raise ValueError(f"flip density must lie in [0, 1/2], got {eta}")
    return int(math.floor(eta * m * n + 0.5))


def _check_dims(m: int, n: int) -> None:
    if m < 1 or n < 1:
        raise ValueError("matrix dimensions must be positive")
    if m * n > MAX_ENTRIES:
        raise ValueError(f"m*n = {m * n} exceeds the supported 2**26 entries")


def bernoulli_signs(seed: int, m: int, n: int) -> np.ndarray:
    """``m x n`` int8 sign matrix from the first ``m*n`` bits of ``expand(seed)``."""
    _check_dims(m, n)
    bits = BitStream(seed).read_bits(m * n)
    return (1 - 2 * bits.astype(np.int8)).reshape(m, n)


def gen_flipset(flip_seed: int, level: int, m: int, n: int, count: int,
                forbidden: np.ndarray | None = None) -> FlipSet:
    """Draw ``count`` distinct positions outside ``forbidden``.

    Positions are drawn one at a time with ``draw_index(m*n)`` from the
    stream of ``flip_seed``; repeats and forbidden positions are skipped.
    The draw loop runs in batches but keeps the sequential semantics.
    """
    _check_dims(m, n)
    total = m * n
    taken = np.zeros(total, dtype=bool)
    if forbidden is not None and len(forbidden):
        taken[np.asarray(forbidden, dtype=np.int64)] = True
    if count < 0 or count + int(taken.sum()) > total:
        raise ValueError(
            f"cannot place {count} flips with {int(taken.sum())} of {total} positions forbidden")
    stream = BitStream(flip_seed)
    chosen = []
    have = 0
    while have < count:
        need = count - have
        free = total - int(taken.sum())
        # coupon-collector estimate of draws yielding `need` new open slots
        batch = int(total * (math.log(free + 0.5) - math.log(free - need + 0.5))) + 16
        batch = min(batch, 1 << 22)
        draws = stream.draw_indices(total, batch).astype(np.int64)
        uniq, first = np.unique(draws, return_index=True)
        fresh = ~taken[uniq]
        uniq, first = uniq[fresh], first[fresh]
        new = uniq[np.argsort(first, kind="stable")][:need]
        taken[new] = True
        chosen.append(new)
        have += len(new)
    flat = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return FlipSet(level, m, n, flat)


def flip_chain(keys: KeyChain, u: int, m: int, n: int, frame_index: int,
               etas: Sequence[float]) -> list[FlipSet]:
    """Flip sets ``C0 .. C(u-1)`` for one frame."""
    if u < 0:
        raise ValueError("class level must be non-negative")
    if u > len(keys.flip_seeds):
        raise KeyDeficitError(f"class {u} needs {u} flip seeds, key has {len(keys.flip_seeds)}")
    if len(etas) < u:
        raise ValueError(f"class {u} needs {u} flip densities, got {len(etas)}")
    sets = []
    claimed = np.zeros(0, dtype=np.int64)
    for v in range(u):
        seed = keystream.frame_seed(keys.flip_seeds[v], frame_index)
        fs = gen_flipset(seed, v, m, n, flip_count(etas[v], m, n), claimed)
        sets.append(fs)
        claimed = np.concatenate([claimed, fs.flat])
    return sets


def gen_matrix(keys: KeyChain, u: int, m: int, n: int, frame_index: int = 0,
               etas: Sequence[float] = ()) -> EncodingMatrix:
    """Class-``u`` encoding matrix ``A(u)`` of frame ``frame_index``.

    ``etas[v]`` is the flip density of level ``v``; only the first ``u``
    entries are used.
    """
    sets = flip_chain(keys, u, m, n, frame_index, etas)
    a = bernoulli_signs(keystream.frame_seed(keys.matrix_seed, frame_index), m, n)
    flat = a.reshape(-1)
    for fs in sets:
        flat[fs.flat] *= -1
    return EncodingMatrix(a, u, frame_index)


def apply_flips(a: EncodingMatrix, flips: FlipSet) -> EncodingMatrix:
    if (flips.m, flips.n) != a.shape:
        raise ShapeMismatchError(f"flip set is {flips.m}x{flips.n}, matrix is {a.shape}")
    e = a.entries.copy()
    e.reshape(-1)[flips.flat] *= -1
    return EncodingMatrix(e, a.class_level + 1, a.frame_index)


def perturbation_of(a0: EncodingMatrix, flips: FlipSet) -> PerturbationMatrix:
    """``dA = A1 - A0``: ``-2 A0`` on the flip positions, zero elsewhere."""
    if (flips.m, flips.n) != a0.shape:
        raise ShapeMismatchError(f"flip set is {flips.m}x{flips.n}, matrix is {a0.shape}")
    d = np.zeros(a0.shape, dtype=np.int8)
    d.reshape(-1)[flips.flat] = -2 * a0.entries.reshape(-1)[flips.flat]
    return PerturbationMatrix(d, flips.level)


def perturbation_between(lower: EncodingMatrix, upper: EncodingMatrix) -> PerturbationMatrix:
    """``upper - lower`` for two matrices of the same frame."""
    if lower.shape != upper.shape:
        raise ShapeMismatchError(f"{lower.shape} vs {upper.shape}")
    d = upper.entries.astype(np.int8) - lower.entries.astype(np.int8)
    return PerturbationMatrix(d, lower.class_level)


def encode(a: EncodingMatrix | np.ndarray, x, scaled: bool = False) -> MeasurementFrame:
    """``y = A x``, times ``1/sqrt(n)`` when ``scaled``."""
    entries = a.entries if isinstance(a, EncodingMatrix) else np.asarray(a)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != entries.shape[1]:
        raise ShapeMismatchError(f"plaintext has shape {x.shape}, matrix has {entries.shape[1]} columns")
    if not np.all(np.isfinite(x)):
        raise ValueError("plaintext contains non-finite values")
    y = entries.astype(np.float64) @ x
    if scaled:
        y = y / math.sqrt(len(x))
    frame = a.frame_index if isinstance(a, EncodingMatrix) else 0
    return MeasurementFrame(y, frame, scaled)


def byte_tables(x: np.ndarray) -> np.ndarray:
    """Per-byte partial sums: ``T[p, v] = sum of x[8p+i] over set bits i of v`` (MSB first)."""
    n = len(x)
    padded = np.zeros(8 * ((n + 7) // 8))
    padded[:n] = x
    bits = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(np.float64)
    return padded.reshape(-1, 8) @ bits.T


def encode_single_rows(x, matrix_seed: int, frame_indices, scaled: bool = False) -> np.ndarray:
    """One measurement per frame, each from a fresh one-row matrix.

    Value ``i`` equals ``encode(gen_matrix(KeyChain(matrix_seed), 0, 1, n,
    frame_indices[i]), x)`` but is computed with byte lookup tables, which
    is what makes ciphertext collections of 10^7 rows affordable.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    fidx = np.asarray(frame_indices, dtype=np.uint64)
    nwords = (n + 63) // 64
    nbytes = (n + 7) // 8
    tables = byte_tables(x).reshape(-1)
    offsets = (256 * np.arange(nbytes)).astype(np.intp)
    total = x.sum()
    out = np.empty(len(fidx))
    chunk = max(1, 2_000_000 // max(nbytes, 1))
    for lo in range(0, len(fidx), chunk):
        seeds = keystream.frame_seeds(matrix_seed, fidx[lo:lo + chunk])
        w = keystream.words(seeds, 0, nwords)
        b = w.astype(">u8").view(np.uint8).reshape(len(seeds), -1)[:, :nbytes]
        ones = tables[b.astype(np.intp) + offsets].sum(axis=1)
        out[lo:lo + chunk] = total - 2.0 * ones
    if scaled:
        out /= math.sqrt(n)
    return out


# -- golden files and measurement CSVs ---------------------------------------

_HEADER = struct.Struct("<4i")


def write_matrix_golden(path, a: EncodingMatrix) -> None:
    """Header ``(m, n, u, frame_index)`` as int32 LE, then packed sign bits (1 = -1)."""
    bits = (a.entries.reshape(-1) < 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(a.m, a.n, a.class_level, a.frame_index))
        fh.write(np.packbits(bits, bitorder="big").tobytes())


def read_matrix_golden(path) -> EncodingMatrix:
    raw = Path(path).read_bytes()
    m, n, u, frame = _HEADER.unpack_from(raw)
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size),
                         bitorder="big")[: m * n]
    if len(bits) != m * n:
        raise ValueError(f"golden file truncated: expected {m * n} bits")
    entries = (1 - 2 * bits.astype(np.int8)).reshape(m, n)
    return EncodingMatrix(entries, u, frame)


def fmt_float(v: float) -> str:
    return repr(float(v))


def write_measurements(path, frames: Sequence[MeasurementFrame], preamble: Sequence[str] = ()) -> None:
    m = frames[0].m if frames else 0
    with open(path, "w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index"] + [f"y_{j}" for j in range(m)])
        for fr in frames:
            w.writerow([fr.frame_index] + [fmt_float(v) for v in fr.y])


def read_measurements(path, scaled: bool = False) -> list[MeasurementFrame]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or rows[0][0] != "frame_index":
        raise ValueError(f"{path}: missing measurement header")
    frames = []
    for r in rows[1:]:
        frames.append(MeasurementFrame(np.array([float(v) for v in r[1:]]), int(r[0]), scaled))
    return frames
