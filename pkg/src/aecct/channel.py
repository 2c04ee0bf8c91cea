"""BPSK over AWGN and the codeword-invariant decoder preprocessing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import ParityCheck, syndrome


@dataclass(frozen=True)
class ChannelSample:
    y: np.ndarray
    x_s: np.ndarray
    ebn0_db: np.ndarray | float
    sigma: np.ndarray | float


@dataclass(frozen=True)
class DecoderInput:
    features: np.ndarray  # (..., 2n-k): [|y|, 1 - 2 s(bin(y))]
    hard_bits: np.ndarray  # (..., n)
    target: np.ndarray  # (..., n) flip indicators of y * x_s


def ebn0_to_sigma(ebn0_db, rate: float):
    """Noise std for unit-energy BPSK: sigma^2 = 1 / (2 R 10^(EbN0/10))."""
    if not 0 < rate < 1:
        raise ValueError("rate must be in (0, 1)")
    return np.sqrt(1.0 / (2.0 * rate * 10.0 ** (np.asarray(ebn0_db, dtype=np.float64) / 10.0)))


def modulate(bits) -> np.ndarray:
    """0 -> +1, 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def hard_decision(y) -> np.ndarray:
    """bin(y) = 0.5 (1 - sign(y)) with sign(0) = +1."""
    return (np.asarray(y) < 0).astype(np.uint8)


def transmit(x_s, ebn0_db, rate: float, rng: np.random.Generator) -> ChannelSample:
    """Add white Gaussian noise at the given Eb/N0.

    ``ebn0_db`` may be a scalar or one value per row of a batched ``x_s``.
    """
    x_s = np.asarray(x_s, dtype=np.float64)
    sigma = ebn0_to_sigma(ebn0_db, rate)
    scale = sigma[..., None] if np.ndim(sigma) and x_s.ndim > 1 else sigma
    y = x_s + scale * rng.standard_normal(x_s.shape)
    return ChannelSample(y=y, x_s=x_s, ebn0_db=ebn0_db, sigma=sigma)


def preprocess(sample: ChannelSample | np.ndarray, pc: ParityCheck, x_s=None) -> DecoderInput:
    """Build decoder features and flip targets from channel output.

    ``sample`` may be a ChannelSample or a bare ``y`` array; with a bare
    array the target is computed against ``x_s`` (all-ones if omitted).
    """
    if isinstance(sample, ChannelSample):
        y, x_s = sample.y, sample.x_s
    else:
        y = np.asarray(sample, dtype=np.float64)
        x_s = np.ones_like(y) if x_s is None else np.asarray(x_s, dtype=np.float64)
    if y.shape[-1] != pc.n:
        raise ValueError(f"expected length {pc.n}, got {y.shape[-1]}")
    hard = hard_decision(y)
    synd = syndrome(pc, hard)
    features = np.concatenate([np.abs(y), 1.0 - 2.0 * synd], axis=-1)
    target = (y * x_s < 0).astype(np.uint8)
    return DecoderInput(features=features, hard_bits=hard, target=target)


def recover_codeword(y, noise_logits) -> np.ndarray:
    """Flip bin(y) wherever the predicted multiplicative noise is negative (logit > 0)."""
    y = np.asarray(y)
    noise_logits = np.asarray(noise_logits)
    if y.shape != noise_logits.shape:
        raise ValueError("y and noise_logits must have the same shape")
    return hard_decision(y) ^ (noise_logits > 0).astype(np.uint8)
