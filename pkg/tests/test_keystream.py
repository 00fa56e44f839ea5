import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mccs import keystream as ks
from mccs.errors import KeyDeficitError

M64 = (1 << 64) - 1
seeds = st.integers(min_value=0, max_value=M64)


def splitmix_oracle(seed, count):
    # textbook sequential SplitMix64
    out, state = [], seed
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def bits_oracle(seed, count):
    words = splitmix_oracle(seed, count // 64 + 2)
    return [(words[i // 64] >> (63 - i % 64)) & 1 for i in range(count)]


def test_golden_first_word():
    assert next(ks.expand(0)) == 0xE220A8397B1DCDAF
    assert int(ks.words(0, 0, 1)[0]) == 0xE220A8397B1DCDAF


@given(seeds, st.integers(0, 40), st.integers(1, 20))
def test_words_random_access(seed, start, count):
    ref = splitmix_oracle(seed, start + count)[start:]
    assert [int(v) for v in ks.words(seed, start, count)] == ref


def test_words_for_seed_arrays():
    got = ks.words(np.array([1, 2, 3], dtype=np.uint64), 2, 4)
    for row, s in zip(got, (1, 2, 3)):
        assert [int(v) for v in row] == splitmix_oracle(s, 6)[2:]


@given(seeds, st.integers(0, 200), st.integers(1, 150))
def test_read_bits_msb_first(seed, skip, count):
    s = ks.BitStream(seed)
    s.read_bits(skip)
    assert list(s.read_bits(count)) == bits_oracle(seed, skip + count)[skip:]
    assert s.position == skip + count


@given(seeds, st.integers(0, 130), st.integers(1, 5))
def test_unaligned_words(seed, skip, count):
    s = ks.BitStream(seed, skip)
    got = [int(v) for v in s.next_words(count)]
    bits = bits_oracle(seed, skip + 64 * count)[skip:]
    ref = [int("".join(map(str, bits[64 * i:64 * i + 64])), 2) for i in range(count)]
    assert got == ref


def draw_index_oracle(words, bound):
    limit = ((1 << 64) // bound) * bound
    out = []
    for w in words:
        if w < limit:
            out.append(w % bound)
    return out


@given(seeds, st.integers(1, M64), st.integers(1, 50))
@settings(max_examples=60)
def test_draw_indices_match_sequential_rejection(seed, bound, count):
    s = ks.BitStream(seed)
    got = [int(v) for v in s.draw_indices(bound, count)]
    words = splitmix_oracle(seed, s.position // 64)
    ref = draw_index_oracle(words, bound)
    assert got == ref  # same values, and no word consumed past the last accepted one
    assert s.position % 64 == 0


def test_draw_index_rejection_path():
    # bound just above 2^63 rejects almost half the words
    bound = (1 << 63) + 12345
    s = ks.BitStream(7)
    got = [s.draw_index(bound) for _ in range(40)]
    ref = draw_index_oracle(splitmix_oracle(7, s.position // 64), bound)
    assert got == ref
    assert all(0 <= g < bound for g in got)


def test_draw_index_bound_checks():
    with pytest.raises(ValueError):
        ks.BitStream(0).draw_index(0)


def test_signs_and_uniforms():
    s = ks.BitStream(3)
    signs = s.draw_signs(64)
    assert set(np.unique(signs)) <= {-1, 1}
    assert list(signs) == [1 - 2 * b for b in bits_oracle(3, 64)]
    u = ks.BitStream(3).uniforms(10000)
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.02


def test_frame_seed():
    assert ks.frame_seed(0, 0) == 0
    assert ks.frame_seed(5, 3) == ks.mix64(5 ^ 3)
    assert [int(v) for v in ks.frame_seeds(5, [0, 1, 2])] == [ks.frame_seed(5, i) for i in range(3)]


def test_seed_range():
    with pytest.raises(ValueError):
        ks.BitStream(-1)
    with pytest.raises(ValueError):
        ks.BitStream(1 << 64)


def test_keychain_derive_prefix():
    k3 = ks.KeyChain.derive(3, 99)
    k2 = ks.KeyChain.derive(2, 99)
    assert k3.class_count == 3 and len(k3.flip_seeds) == 2
    assert k3.for_class(1) == k2
    assert ks.KeyChain.derive(1, 99).flip_seeds == ()
    assert k3.matrix_seed == splitmix_oracle(99, 1)[0]


def test_keychain_deficit():
    with pytest.raises(KeyDeficitError):
        ks.KeyChain.derive(2, 1).for_class(2)


def test_keychain_json_roundtrip(tmp_path):
    k = ks.KeyChain.derive(4, 2 ** 64 - 1)
    k.save(tmp_path / "k.json")
    assert ks.KeyChain.load(tmp_path / "k.json") == k
    data = json.loads((tmp_path / "k.json").read_text())
    assert data["w"] == 4 and all(isinstance(s, str) for s in data["flip_seeds"])
    assert k.dumps() == ks.KeyChain.derive(4, 2 ** 64 - 1).dumps()


def test_keychain_malformed():
    with pytest.raises(ValueError):
        ks.KeyChain.from_dict({"w": 2})
    with pytest.raises(KeyDeficitError):
        ks.KeyChain.from_dict({"w": 3, "matrix_seed": "1", "flip_seeds": ["2"]})


def test_sign_balance_seed42():
    n = 10 ** 6
    s = ks.BitStream(42).draw_signs(n).astype(np.float64)
    assert abs(s.mean()) <= 4 / np.sqrt(n)


def test_draw_index_small_bounds():
    from scipy.stats import chisquare

    assert set(ks.BitStream(1).draw_indices(1, 100).tolist()) == {0}
    v = ks.BitStream(5).draw_indices(7, 10 ** 5)
    assert chisquare(np.bincount(v.astype(np.int64), minlength=7)).pvalue > 0.01
    assert 0 <= ks.BitStream(5).draw_index(M64) < M64


def test_replay_determinism():
    a = ks.BitStream(0)
    first = [a.next_word() for _ in range(5)]
    a.reset()
    assert [a.next_word() for _ in range(5)] == first
    assert int(ks.words(1, 0, 1)[0]) != int(ks.words(2, 0, 1)[0])
