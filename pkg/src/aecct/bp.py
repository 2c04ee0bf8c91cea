"""Sum-product belief propagation over the Tanner graph (flooding schedule)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import ParityCheck

MIN_MAG = np.finfo(np.float64).tiny  # keeps phi(0) finite (about 709)


@dataclass
class BpResult:
    bits: np.ndarray  # (batch, n) hard decisions
    llr: np.ndarray  # (batch, n) posterior LLRs, positive favours bit 0
    converged: np.ndarray  # (batch,) bool
    iters: np.ndarray  # (batch,) iterations run per frame


def _phi(x):
    """phi(x) = -ln tanh(x / 2) = ln(1 + 2 / (e^x - 1)); self-inverse on x > 0."""
    with np.errstate(over="ignore"):
        return np.log1p(2.0 / np.expm1(np.maximum(x, MIN_MAG)))


def _check_slots(chk, m):
    """Lay edges (sorted by check) out as a padded (m, max_degree) grid.

    Returns the grid of edge ids (padding points at the extra id ``len(chk)``)
    and each edge's flat slot in the grid.
    """
    start = np.searchsorted(chk, np.arange(m))
    pos = np.arange(chk.size) - start[chk]
    width = int(pos.max()) + 1
    grid = np.full((m, width), chk.size, dtype=np.int64)
    grid[chk, pos] = np.arange(chk.size)
    return grid, chk * width + pos


def _extrinsic_sums(values, grid, slots):
    """Per edge, the sum over the other edges of its check, without subtracting.

    Exclusive prefix plus exclusive suffix sums keep small terms exact when one
    edge dominates the total.
    """
    padded = np.concatenate([values, np.zeros(values.shape[:-1] + (1,))], axis=-1)[..., grid]
    zero = np.zeros(padded.shape[:-1] + (1,))
    before = np.concatenate([zero, np.cumsum(padded, axis=-1)[..., :-1]], axis=-1)
    after = np.concatenate([np.cumsum(padded[..., ::-1], axis=-1)[..., -2::-1], zero], axis=-1)
    flat = (before + after).reshape(values.shape[:-1] + (-1,))
    return flat[..., slots]


def _group_sum_matrix(index, size):
    mat = np.zeros((index.size, size))
    mat[np.arange(index.size), index] = 1.0
    return mat


def bp_decode(pc: ParityCheck, y, sigma: float, max_iters: int = 5,
              early_stop: bool = True) -> BpResult:
    """Decode BPSK/AWGN observations with sum-product BP.

    Args:
        pc: code.
        y: channel outputs, shape (n,) or (batch, n).
        sigma: noise standard deviation.
        max_iters: iteration budget L.
        early_stop: freeze a frame once its hard decision has zero syndrome.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != pc.n:
        raise ValueError(f"expected length {pc.n}, got {y.shape[1]}")

    chk, var = np.nonzero(pc.h)
    to_chk = _group_sum_matrix(chk, pc.m)  # (E, m)
    grid, slots = _check_slots(chk, pc.m)
    to_var = _group_sum_matrix(var, pc.n)  # (E, n)
    h_t = pc.h.T.astype(np.int64)

    batch = y.shape[0]
    prior = 2.0 * y / sigma ** 2
    v2c = prior[:, var]
    posterior = prior.copy()
    bits = (prior < 0).astype(np.uint8)
    llr_out = prior.copy()
    done = np.zeros(batch, dtype=bool)
    iters = np.full(batch, max_iters, dtype=np.int64)

    for it in range(1, max_iters + 1):
        # tanh rule in the phi domain: |c2v| = phi(sum of phi(|v2c|) over the other edges)
        mag = _phi(np.abs(v2c))
        neg = v2c < 0
        ext_mag = _extrinsic_sums(mag, grid, slots)
        ext_neg = ((neg.astype(np.int64) @ to_chk.astype(np.int64)) @ to_chk.T.astype(np.int64)
                   - neg) % 2
        c2v = _phi(ext_mag) * np.where(ext_neg == 1, -1.0, 1.0)

        incoming = c2v @ to_var
        posterior = prior + incoming
        v2c = posterior[:, var] - c2v

        hard = (posterior < 0).astype(np.uint8)
        live = ~done
        bits[live] = hard[live]
        llr_out[live] = posterior[live]
        if early_stop:
            ok = live & ~np.any((hard.astype(np.int64) @ h_t) % 2, axis=1)
            iters[ok] = it
            done |= ok
            if done.all():
                break

    converged = ~np.any((bits.astype(np.int64) @ h_t) % 2, axis=1)
    if not early_stop:
        iters[:] = max_iters
    result = BpResult(bits=bits, llr=llr_out, converged=converged, iters=iters)
    if single:
        return BpResult(bits[0], llr_out[0], converged[0], iters[0])
    return result
