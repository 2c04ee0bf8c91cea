"""Adaptive absolute-percentile ternary weights, INT8 absmax activations, 2-bit packing.

Numpy only: this is what the frozen integer inference path runs on. The
differentiable training counterparts live in :mod:`aecct.qat`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

QB = 127
EPS_Q = 1e-6
DELTA_MIN = 1e-3
MAX_IN_DIM = 1 << 16  # 127 * 2**16 < 2**31 keeps int32 accumulators exact

# 2-bit codes, four weights per byte, lowest bits first
_CODE = {0: 0b00, 1: 0b01, -1: 0b11}


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def abs_percentile(w, p: float = 0.5) -> float:
    """p-quantile of |w| with linear interpolation between order statistics."""
    w = np.asarray(w)
    if w.size == 0:
        raise ValueError("empty weight tensor")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return float(np.quantile(np.abs(w), p))


def ternarize(w, gamma: float, delta: float, eps_q: float = EPS_Q) -> np.ndarray:
    """RoundClip(w / (gamma * delta + eps_q), -1, 1) as int8."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    scaled = np.asarray(w, dtype=np.float64) / (gamma * delta + eps_q)
    return np.clip(round_half_away(scaled), -1, 1).astype(np.int8)


def quant_act(x, axes=None):
    """Absmax INT8 quantization.

    Args:
        x: activations.
        axes: axes sharing one scale; ``None`` means the whole tensor.

    Returns:
        (q, alpha): int8 codes and the absmax scale (1 where x is all zero).
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    alpha = np.max(np.abs(x), axis=axes, keepdims=axes is not None)
    alpha = np.where(alpha == 0, x.dtype.type(1), alpha).astype(x.dtype)
    # same expression order as the torch path so float32 inputs give identical codes
    q = np.clip(round_half_away(x * (x.dtype.type(QB) / alpha)), -QB, QB).astype(np.int8)
    return q, alpha


def pack_ternary(t) -> bytes:
    t = np.asarray(t)
    if not np.all(np.isin(t, (-1, 0, 1))):
        raise ValueError("ternary matrix must contain only -1, 0, +1")
    codes = np.zeros(t.size, dtype=np.uint8)
    flat = t.reshape(-1)
    codes[flat == 1] = _CODE[1]
    codes[flat == -1] = _CODE[-1]
    pad = (-codes.size) % 4
    codes = np.concatenate([codes, np.zeros(pad, dtype=np.uint8)]).reshape(-1, 4)
    packed = codes[:, 0] | (codes[:, 1] << 2) | (codes[:, 2] << 4) | (codes[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def unpack_ternary(blob: bytes, shape) -> np.ndarray:
    size = int(np.prod(shape))
    raw = np.frombuffer(blob, dtype=np.uint8)
    if raw.size != -(-size // 4):
        raise ValueError(f"blob of {raw.size} bytes cannot hold {size} weights")
    codes = np.stack([(raw >> s) & 0b11 for s in (0, 2, 4, 6)], axis=1).reshape(-1)[:size]
    if np.any(codes == 0b10):
        raise ValueError("invalid 2-bit code 0b10 in packed weights")
    out = np.zeros(size, dtype=np.int8)
    out[codes == _CODE[1]] = 1
    out[codes == _CODE[-1]] = -1
    return out.reshape(shape)


@dataclass(frozen=True)
class TernaryPackedLayer:
    """Frozen AAP linear layer: packed ternary weights and one FP32 scale."""

    packed: bytes
    shape: tuple  # (out, in)
    scale: float  # gamma * delta at freeze time
    bias: np.ndarray
    qb: int = QB

    @classmethod
    def from_ternary(cls, t, scale, bias):
        t = np.asarray(t)
        return cls(packed=pack_ternary(t), shape=tuple(t.shape), scale=float(np.float32(scale)),
                   bias=np.asarray(bias, dtype=np.float32).copy())

    @cached_property
    def ternary(self) -> np.ndarray:
        t = unpack_ternary(self.packed, self.shape)
        t.setflags(write=False)
        return t

    @cached_property
    def plan(self) -> "_SignedIndex":
        return _SignedIndex(self.ternary)

    @property
    def nbytes(self) -> int:
        return len(self.packed)

    def zero_fraction(self) -> float:
        return float(np.mean(self.ternary == 0))


def freeze_weights(w, delta: float, bias, p: float = 0.5, eps_q: float = EPS_Q) -> TernaryPackedLayer:
    """Fix the ternary pattern and scale of a trained AAP layer."""
    gamma = abs_percentile(w, p)
    t = ternarize(w, gamma, delta, eps_q)
    return TernaryPackedLayer.from_ternary(t, gamma * delta, bias)


class _SignedIndex:
    """Gather plan that turns a ternary matrix into index lists for +1 and -1."""

    def __init__(self, t):
        out_dim, self.in_dim = t.shape
        self.pos_idx, self.pos_start = self._plan(t == 1, out_dim)
        self.neg_idx, self.neg_start = self._plan(t == -1, out_dim)

    @staticmethod
    def _plan(sel, out_dim):
        rows, cols = np.nonzero(sel)
        counts = np.bincount(rows, minlength=out_dim)
        start = np.concatenate([[0], np.cumsum(counts)])
        return cols, start

    @staticmethod
    def _segment_sums(q, idx, start):
        gathered = q[..., idx].astype(np.int32)
        csum = np.concatenate(
            [np.zeros(q.shape[:-1] + (1,), dtype=np.int32), np.cumsum(gathered, axis=-1, dtype=np.int32)],
            axis=-1,
        )
        return csum[..., start[1:]] - csum[..., start[:-1]]

    def accumulate(self, q):
        return (self._segment_sums(q, self.pos_idx, self.pos_start)
                - self._segment_sums(q, self.neg_idx, self.neg_start))


def integer_accumulate(q, t) -> np.ndarray:
    """sum_i q_i * t_oi using only integer additions and subtractions.

    Each output is the sum of the inputs whose weight is +1 minus the sum of
    those whose weight is -1; zero weights are skipped.
    """
    plan = t if isinstance(t, _SignedIndex) else _SignedIndex(np.asarray(t))
    if plan.in_dim > MAX_IN_DIM:
        raise ValueError(f"input dimension {plan.in_dim} exceeds {MAX_IN_DIM}; int32 may overflow")
    q = np.asarray(q)
    if q.shape[-1] != plan.in_dim:
        raise ValueError(f"input width {q.shape[-1]} does not match layer input {plan.in_dim}")
    return plan.accumulate(q)


def aap_linear_infer(x, layer: TernaryPackedLayer, act_axes=None):
    """Integer-path AAP linear: INT8 activations, additions only, one dequantization.

    Args:
        x: activations, (..., in).
        layer: frozen layer.
        act_axes: axes sharing one activation scale (``None``: whole tensor).
    """
    q, alpha = quant_act(x, act_axes)
    acc = integer_accumulate(q, layer.plan)
    dtype = np.result_type(np.asarray(x).dtype, np.float32)
    scale = dtype.type(layer.scale) * alpha / dtype.type(layer.qb)
    return acc.astype(dtype) * scale + layer.bias.astype(dtype)
