import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aecct.bp import bp_decode
from aecct.codes import derive_generator, encode

from conftest import repetition3, single_parity4


def brute_force_map_llr(pc, y, sigma):
    """Exact bitwise posterior LLRs by enumerating every codeword."""
    gen = derive_generator(pc)
    words = encode(gen, np.array(list(itertools.product([0, 1], repeat=pc.k))))
    channel = 2.0 * np.asarray(y) / sigma ** 2
    log_like = (channel * (1 - 2.0 * words)).sum(axis=1) / 2.0
    llr = []
    for i in range(pc.n):
        zero = np.logaddexp.reduce(log_like[words[:, i] == 0])
        one = np.logaddexp.reduce(log_like[words[:, i] == 1])
        llr.append(zero - one)
    return np.array(llr)


def test_repetition_code_matches_map_example():
    pc = repetition3()
    y = np.array([2.0, 1.0, -0.5])
    res = bp_decode(pc, y, 1.0, max_iters=5, early_stop=False)
    assert np.allclose(res.llr, brute_force_map_llr(pc, y, 1.0), atol=1e-9)
    assert np.allclose(res.llr, 2 * y.sum())  # all bits share the summed evidence
    assert res.bits.tolist() == [0, 0, 0]


@pytest.mark.parametrize("make", [repetition3, single_parity4])
@given(st.integers(0, 2 ** 20), st.floats(0.4, 1.5))
def test_cycle_free_codes_are_map_exact(make, seed, sigma):
    pc = make()
    y = 1.0 + sigma * np.random.default_rng(seed).standard_normal(pc.n)
    res = bp_decode(pc, y, sigma, max_iters=6, early_stop=False)
    assert np.allclose(res.llr, brute_force_map_llr(pc, y, sigma), rtol=1e-7, atol=1e-7)


def test_noiseless_codeword_converges_in_one_iteration(bch31):
    x = encode(derive_generator(bch31), np.random.default_rng(0).integers(0, 2, 16))
    res = bp_decode(bch31, 1.0 - 2.0 * x, 0.7)
    assert res.converged and res.iters == 1
    assert np.array_equal(res.bits, x)


def test_single_error_is_corrected(hamming):
    y = np.ones(7)
    y[3] = -0.3
    res = bp_decode(hamming, y, 0.8)
    assert not res.bits.any() and res.converged


@given(arrays(np.float64, (4, 7), elements=st.floats(-3, 3)))
def test_batch_matches_single_frames(y):
    from aecct.codes import bundled_code

    pc = bundled_code("hamming_7_4")
    batch = bp_decode(pc, y, 0.9)
    for row, bits, llr in zip(y, batch.bits, batch.llr):
        single = bp_decode(pc, row, 0.9)
        assert np.array_equal(single.bits, bits)
        assert np.allclose(single.llr, llr)


def test_saturated_inputs_stay_finite(bch31):
    y = np.full(31, 40.0)
    y[:3] = -40.0
    res = bp_decode(bch31, y, 0.1, max_iters=20)
    assert np.isfinite(res.llr).all()


def test_argument_validation(hamming):
    with pytest.raises(ValueError):
        bp_decode(hamming, np.ones(7), 0.0)
    with pytest.raises(ValueError):
        bp_decode(hamming, np.ones(7), 1.0, max_iters=0)
    with pytest.raises(ValueError):
        bp_decode(hamming, np.ones(6), 1.0)
