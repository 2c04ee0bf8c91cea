import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aecct.codes import (BUNDLED, CodeFormatError, ParityCheck, RankDeficientError,
                         bundled_code, derive_generator, encode, gf2_rank, load_parity_check,
                         parse_alist, resolve_code, syndrome, to_alist)

H48 = np.array([
    [1, 0, 1, 1, 0, 0, 1, 0],
    [0, 1, 1, 0, 1, 0, 0, 1],
    [1, 1, 0, 0, 0, 1, 1, 0],
    [0, 0, 1, 1, 1, 1, 0, 1],
], dtype=np.uint8)


def brute_force_null_space(h):
    n = h.shape[1]
    words = np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int64)
    return {tuple(w) for w in words if not ((h.astype(np.int64) @ w) % 2).any()}


def test_generator_spans_brute_force_null_space():
    pc = ParityCheck(H48)
    gen = derive_generator(pc)
    msgs = np.array(list(itertools.product([0, 1], repeat=pc.k)))
    spanned = {tuple(c) for c in encode(gen, msgs)}
    assert spanned == brute_force_null_space(H48)
    assert len(spanned) == 2 ** pc.k


def test_generator_is_systematic_under_permutation():
    gen = derive_generator(ParityCheck(H48))
    assert np.array_equal(gen.g[:, gen.perm[:gen.k]], np.eye(gen.k, dtype=np.uint8))


@pytest.mark.parametrize("key", sorted(BUNDLED))
def test_bundled_codes_have_dimensions_and_zero_gh(key):
    pc = bundled_code(key)
    name = BUNDLED[key]
    n, k = (int(v) for v in name[name.index("(") + 1:-1].split(","))
    assert (pc.n, pc.k) == (n, k)
    gen = derive_generator(pc)
    assert not ((gen.g.astype(np.int64) @ pc.h.T) % 2).any()
    assert gf2_rank(gen.g) == pc.k


def test_hamming_syndrome_locates_single_error(hamming):
    gen = derive_generator(hamming)
    cw = encode(gen, [1, 0, 1, 1])
    assert not syndrome(hamming, cw).any()
    cols = {tuple(hamming.h[:, j]) for j in range(7)}
    assert len(cols) == 7  # distinct columns, single errors are identifiable
    for j in range(7):
        err = cw.copy()
        err[j] ^= 1
        assert tuple(syndrome(hamming, err)) == tuple(hamming.h[:, j])


@given(arrays(np.uint8, (5, 9), elements=st.integers(0, 1)))
def test_alist_round_trip(h):
    try:
        pc = ParityCheck(h)
    except (RankDeficientError, CodeFormatError):
        return
    if (h.sum(axis=0) == 0).any() or (h.sum(axis=1) == 0).any():
        return
    assert parse_alist(to_alist(pc)) == pc


def test_dense_and_alist_text_agree(hamming):
    dense = "\n".join(" ".join(map(str, row)) for row in hamming.h)
    assert load_parity_check(dense) == load_parity_check(to_alist(hamming)) == hamming


def test_rank_deficient_rejected():
    with pytest.raises(RankDeficientError):
        ParityCheck(np.array([[1, 1, 0], [1, 1, 0]]))


@pytest.mark.parametrize("text", [
    "3 2\n",
    "3 2\n2 2\n1 1\n2 2\n1\n1\n2\n1 2\n3 1\n",  # column 3 lists no row but row 2 claims it
    "3 x\n1 1\n1 1 1\n1 1\n1\n1\n1\n1\n1\n",
])
def test_malformed_alist_raises(text):
    with pytest.raises(CodeFormatError):
        parse_alist(text)


def test_non_binary_entries_rejected():
    with pytest.raises(CodeFormatError):
        ParityCheck(np.array([[1, 2, 0], [0, 1, 1]]))


def test_syndrome_and_encode_validate_input(hamming):
    with pytest.raises(ValueError):
        syndrome(hamming, [0, 1, 0])
    with pytest.raises(ValueError):
        encode(derive_generator(hamming), [0, 1, 2, 0])


def test_resolve_code_accepts_key_and_path(tmp_path, hamming):
    assert resolve_code("hamming_7_4") == hamming
    path = tmp_path / "h.alist"
    path.write_text(to_alist(hamming))
    assert resolve_code(str(path)) == hamming
    with pytest.raises(FileNotFoundError):
        resolve_code(str(tmp_path / "missing.alist"))


def test_fingerprint_separates_codes(hamming, bch31):
    assert hamming.fingerprint() != bch31.fingerprint()
    assert hamming.fingerprint() == bundled_code("hamming_7_4").fingerprint()


def test_ldpc_49_24_shape():
    pc = bundled_code("ldpc_49_24")
    assert (pc.n, pc.k, pc.h.shape) == (49, 24, (25, 49))


def test_duplicated_row_alist_rejected(hamming):
    dup = ParityCheck.__new__(ParityCheck)  # bypass validation to write a bad file
    object.__setattr__(dup, "h", np.vstack([hamming.h, hamming.h[:1]]))
    object.__setattr__(dup, "n", 7)
    object.__setattr__(dup, "k", 3)
    with pytest.raises(RankDeficientError):
        parse_alist(to_alist(dup))


def test_encoding_linearity(hamming):
    gen = derive_generator(hamming)
    assert not encode(gen, np.zeros(4, dtype=int)).any()
    for i in range(4):
        assert np.array_equal(encode(gen, np.eye(4, dtype=int)[i]), gen.g[i])
    words = encode(gen, np.array(list(itertools.product([0, 1], repeat=4))))
    assert len({tuple(w) for w in words}) == 16
    assert not syndrome(hamming, words).any()


def test_bch_syndrome_matches_naive_oracle(bch31):
    rng = np.random.default_rng(7)
    for v in rng.integers(0, 2, size=(20, 31)):
        naive = []
        for row in bch31.h:
            acc = 0
            for a, b in zip(row, v):
                acc ^= int(a) & int(b)
            naive.append(acc)
        assert syndrome(bch31, v).tolist() == naive
