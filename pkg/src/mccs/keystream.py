"""Deterministic keyed randomness built on SplitMix64.

Every random artifact of the cipher (encoding matrices, flip sets, keyed
bases, synthetic plaintexts) is expanded from a 64-bit seed with the
SplitMix64 recurrence, so that streams are portable and replayable:

    state += 0x9E3779B97F4A7C15
    z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    word = z ^ (z >> 31)

Word ``i`` of ``expand(seed)`` only depends on ``seed + (i + 1) * GAMMA``,
which makes the stream random-access and lets numpy evaluate whole
blocks at once. Bits are consumed most-significant-first within a word.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.special import ndtri

from .errors import KeyDeficitError

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

_U64 = np.uint64


def mix64(z: int) -> int:
    """SplitMix64 output function on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorised :func:`mix64` over a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=_U64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(_MUL1)
        z = (z ^ (z >> _U64(27))) * _U64(_MUL2)
    return z ^ (z >> _U64(31))


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def expand(seed: int) -> Iterator[int]:
    """Infinite SplitMix64 word stream for ``seed``."""
    state = check_seed(seed)
    while True:
        state = (state + GAMMA) & MASK64
        yield mix64(state)


def words(seed, start: int, count: int) -> np.ndarray:
    """Words ``start .. start+count-1`` of ``expand(seed)``.

    ``seed`` may also be a 1-D array of seeds, in which case the result
    has shape ``(len(seed), count)``.
    """
    offsets = np.arange(start + 1, start + count + 1, dtype=_U64)
    with np.errstate(over="ignore"):
        steps = offsets * _U64(GAMMA)
        if np.ndim(seed) == 0:
            states = _U64(check_seed(seed)) + steps
        else:
            states = np.asarray(seed, dtype=_U64)[:, None] + steps[None, :]
    return mix64_array(states)


def frame_seed(matrix_seed: int, frame_index: int) -> int:
    """Seed of the stream used for frame ``frame_index``.

    Every plaintext frame is encoded with a fresh matrix; its stream is
    keyed by ``mix64(matrix_seed ^ frame_index)``. Frame 0 of seed 0 maps
    to seed 0 since ``mix64(0) == 0``.
    """
    return mix64(check_seed(matrix_seed) ^ int(frame_index))


def frame_seeds(matrix_seed: int, frame_indices) -> np.ndarray:
    idx = np.asarray(frame_indices, dtype=_U64)
    return mix64_array(_U64(check_seed(matrix_seed)) ^ idx)


def words_to_bits(w: np.ndarray) -> np.ndarray:
    """Unpack uint64 words into 0/1 bits, MSB first, along the last axis."""
    w = np.ascontiguousarray(w, dtype=_U64)
    as_bytes = w.astype(">u8").view(np.uint8).reshape(*w.shape[:-1], -1)
    return np.unpackbits(as_bytes, axis=-1)


class BitStream:
    """Replayable bit consumer over ``expand(seed)``.

    Single-consumer; the only mutable state is ``position`` (in bits).
    """

    def __init__(self, seed: int, position: int = 0):
        self.seed = check_seed(seed)
        self.position = int(position)

    def __repr__(self):
        return f"BitStream(seed={self.seed}, position={self.position})"

    def reset(self) -> None:
        self.position = 0

    def read_bits(self, count: int) -> np.ndarray:
        """Next ``count`` bits as a uint8 array of zeros and ones."""
        if count <= 0:
            return np.zeros(0, dtype=np.uint8)
        first = self.position // 64
        last = (self.position + count - 1) // 64
        bits = words_to_bits(words(self.seed, first, last - first + 1))
        off = self.position - 64 * first
        self.position += count
        return bits[off:off + count]

    def next_bit(self) -> int:
        return int(self.read_bits(1)[0])

    def next_words(self, count: int) -> np.ndarray:
        """Next ``count`` 64-bit values (need not be word aligned)."""
        first, r = divmod(self.position, 64)
        self.position += 64 * count
        if r == 0:
            return words(self.seed, first, count)
        w = words(self.seed, first, count + 1)
        return (w[:-1] << _U64(r)) | (w[1:] >> _U64(64 - r))

    def next_word(self) -> int:
        return int(self.next_words(1)[0])

    def draw_sign(self) -> int:
        """+1 for a 0 bit, -1 for a 1 bit."""
        return 1 - 2 * self.next_bit()

    def draw_signs(self, count: int) -> np.ndarray:
        return (1 - 2 * self.read_bits(count).astype(np.int8)).astype(np.int8)

    def draw_index(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by 64-bit rejection sampling."""
        return int(self.draw_indices(bound, 1)[0])

    def draw_indices(self, bound: int, count: int) -> np.ndarray:
        """``count`` consecutive :meth:`draw_index` results, vectorised.

        Consumes exactly the words the sequential loop would consume.
        """
        bound = int(bound)
        if bound < 1:
            raise ValueError("bound must be >= 1")
        if bound > MASK64:
            raise ValueError("bound must fit in 64 bits")
        limit = ((1 << 64) // bound) * bound
        out = np.empty(count, dtype=_U64)
        filled = 0
        while filled < count:
            need = count - filled
            start = self.position
            batch = self.next_words(need + need // 8 + 4)
            if limit > MASK64:
                ok = np.ones(batch.shape, dtype=bool)
            else:
                ok = batch < _U64(limit)
            accepted = np.flatnonzero(ok)
            if len(accepted) >= need:
                used = accepted[need - 1] + 1
                accepted = accepted[:need]
                self.position = start + 64 * int(used)
            out[filled:filled + len(accepted)] = batch[accepted] % _U64(bound)
            filled += len(accepted)
        return out

    def uniforms(self, count: int) -> np.ndarray:
        """Doubles in the open interval (0, 1), one word each."""
        w = self.next_words(count)
        return ((w >> _U64(11)).astype(np.float64) + 0.5) * 2.0 ** -53

    def normals(self, count: int) -> np.ndarray:
        """Standard normal deviates by inverse-CDF transform of :meth:`uniforms`."""
        return ndtri(self.uniforms(count))


@dataclass(frozen=True)
class KeyChain:
    """Multiclass key: ``Key(A0)`` plus ``Key(C0) .. Key(C(w-2))``.

    A class-``u`` user holds the matrix seed and the first ``u`` flip seeds.
    """

    matrix_seed: int
    flip_seeds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "matrix_seed", check_seed(self.matrix_seed))
        object.__setattr__(self, "flip_seeds", tuple(check_seed(s) for s in self.flip_seeds))

    @property
    def class_count(self) -> int:
        return len(self.flip_seeds) + 1

    def for_class(self, u: int) -> "KeyChain":
        if u < 0:
            raise ValueError("class level must be non-negative")
        if u > len(self.flip_seeds):
            raise KeyDeficitError(
                f"class {u} needs {u} flip seeds, key exposes {len(self.flip_seeds)}")
        return KeyChain(self.matrix_seed, self.flip_seeds[:u])

    @classmethod
    def derive(cls, w: int, master_seed: int) -> "KeyChain":
        """Expand a master seed into a ``w``-class key."""
        if w < 1:
            raise ValueError("w must be >= 1")
        sub = [int(v) for v in words(master_seed, 0, w)]
        return cls(sub[0], tuple(sub[1:]))

    def to_dict(self) -> dict:
        return {
            "w": self.class_count,
            "matrix_seed": str(self.matrix_seed),
            "flip_seeds": [str(s) for s in self.flip_seeds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KeyChain":
        try:
            keys = cls(int(data["matrix_seed"]), tuple(int(s) for s in data["flip_seeds"]))
            w = int(data["w"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed key object: {exc}") from exc
        if w < 1 or w > keys.class_count:
            raise KeyDeficitError(f"key declares w={w} but holds {len(keys.flip_seeds)} flip seeds")
        return keys.for_class(w - 1)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "KeyChain":
        return cls.from_dict(json.loads(Path(path).read_text()))
