import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aecct.channel import (ebn0_to_sigma, hard_decision, modulate, preprocess, recover_codeword,
                           transmit)
from aecct.codes import derive_generator, encode, syndrome


def test_sigma_at_4db_rate_16_31():
    # oracle: 30-digit mpmath evaluation of 1 / (2 (16/31) 10^0.4)
    sigma = ebn0_to_sigma(4.0, 16 / 31)
    assert sigma ** 2 == pytest.approx(0.385666321473700, abs=1e-12)
    assert sigma == pytest.approx(0.621020387325328, abs=1e-12)


def test_noiseless_limit():
    sample = transmit(np.ones((100, 31)), 60.0, 16 / 31, np.random.default_rng(0))
    assert np.abs(sample.y - 1.0).max() < 1e-2


def test_sigma_rejects_bad_rate():
    with pytest.raises(ValueError):
        ebn0_to_sigma(4.0, 1.0)


def test_hard_decision_maps_zero_to_bit_zero():
    assert hard_decision([0.0, -0.0, 1e-9, -1e-9]).tolist() == [0, 0, 0, 1]


def test_modulate_is_bpsk():
    assert modulate([0, 1, 1]).tolist() == [1.0, -1.0, -1.0]


def test_empirical_noise_variance_matches_sigma():
    rng = np.random.default_rng(0)
    sample = transmit(np.ones((2000, 50)), 5.0, 0.5, rng)
    assert np.var(sample.y - 1.0) == pytest.approx(float(sample.sigma) ** 2, rel=0.02)


def test_per_row_snr_broadcasts():
    rng = np.random.default_rng(1)
    ebn0 = np.array([0.0, 30.0])
    sample = transmit(np.ones((2, 4000)), ebn0, 0.5, rng)
    spread = np.std(sample.y - 1.0, axis=1)
    assert spread[0] / spread[1] == pytest.approx(10 ** 1.5, rel=0.05)


def test_features_layout(hamming):
    y = np.array([0.5, -1.0, 2.0, 0.1, -0.2, 1.0, 1.0])
    inp = preprocess(y, hamming)
    synd = syndrome(hamming, hard_decision(y))
    assert inp.features.shape == (2 * 7 - 4,)
    assert np.allclose(inp.features[:7], np.abs(y))
    assert np.array_equal(inp.features[7:], 1.0 - 2.0 * synd)
    assert inp.target.tolist() == [0, 1, 0, 0, 1, 0, 0]


@given(st.integers(0, 2 ** 16 - 1), st.floats(1.0, 8.0))
def test_codeword_invariance(seed, ebn0):
    """Features and targets depend only on the multiplicative noise, not the codeword."""
    from aecct.codes import bundled_code

    pc = bundled_code("hamming_7_4")
    gen = derive_generator(pc)
    rng = np.random.default_rng(seed)
    msg = rng.integers(0, 2, size=pc.k)
    x_s = modulate(encode(gen, msg))
    noise = ebn0_to_sigma(ebn0, pc.rate) * rng.standard_normal(pc.n)
    sent = preprocess(x_s + noise * x_s, pc, x_s)  # same multiplicative noise
    zero = preprocess(np.ones(pc.n) + noise, pc)
    assert np.allclose(sent.features, zero.features)
    assert np.array_equal(sent.target, zero.target)


@given(st.integers(0, 2 ** 16 - 1))
def test_oracle_logits_recover_codeword(seed):
    from aecct.codes import bundled_code

    pc = bundled_code("hamming_7_4")
    rng = np.random.default_rng(seed)
    x = encode(derive_generator(pc), rng.integers(0, 2, size=pc.k))
    y = modulate(x) + 0.8 * rng.standard_normal(pc.n)
    target = preprocess(y, pc, modulate(x)).target
    logits = np.where(target == 1, 3.0, -3.0)
    assert np.array_equal(recover_codeword(y, logits), x)


def test_preprocess_rejects_wrong_length(hamming):
    with pytest.raises(ValueError):
        preprocess(np.ones(6), hamming)


def test_mapping_examples():
    assert modulate(np.zeros(3)).tolist() == [1, 1, 1]
    assert modulate(np.ones(3)).tolist() == [-1, -1, -1]
    assert modulate([0, 1, 0]).tolist() == [1, -1, 1]


def test_fixed_seed_is_deterministic():
    a = transmit(np.ones(31), 4.0, 0.5, np.random.default_rng(3)).y
    b = transmit(np.ones(31), 4.0, 0.5, np.random.default_rng(3)).y
    assert np.array_equal(a, b)


def test_noiseless_zero_codeword_features(bch31):
    inp = preprocess(np.ones(31), bch31)
    assert np.array_equal(inp.features, np.ones(46))
    assert not inp.target.any()


def test_single_flip_target_and_recovery(bch31):
    y = np.ones(31)
    y[5] = -1.0
    inp = preprocess(y, bch31)
    assert inp.target.tolist() == np.eye(31, dtype=int)[5].tolist()
    assert np.array_equal(recover_codeword(y, np.full(31, -50.0)), hard_decision(y))
    logits = np.full(31, -5.0)
    logits[5] = 5.0
    assert not recover_codeword(y, logits).any()


def test_recover_codeword_matches_sign_oracle():
    rng = np.random.default_rng(11)
    y = rng.standard_normal((50, 9))
    logits = rng.standard_normal((50, 9))
    eps_hat = np.where(logits > 0, -1.0, 1.0)
    oracle = (np.where(y >= 0, 1.0, -1.0) * eps_hat < 0).astype(np.uint8)
    assert np.array_equal(recover_codeword(y, logits), oracle)
