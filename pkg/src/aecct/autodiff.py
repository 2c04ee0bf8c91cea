"""Differentiable primitives, straight-through hooks, Adam, LR schedule and checkpoints.

Reverse-mode differentiation is delegated to torch autograd; this module pins
down the exact primitive semantics the decoder relies on (masked softmax with
empty rows, ReLU at zero, Post-LN epsilon) and the training utilities around them.
"""

from __future__ import annotations

import base64
import json
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


def matmul(a, b):
    return a @ b


def add(a, b):
    return a + b


def mul(a, b):
    return a * b


def concat(tensors, dim=-1):
    return torch.cat(list(tensors), dim=dim)


def slice_(x, start, stop, dim=-1):
    return x.narrow(dim, start, stop - start)


def transpose(x, dim0=-2, dim1=-1):
    return x.transpose(dim0, dim1)


def relu(x):
    # torch defines d relu / dx at 0 as 0
    return torch.relu(x)


def reduce_sum(x, dim=None):
    return x.sum() if dim is None else x.sum(dim)


def reduce_mean(x, dim=None):
    return x.mean() if dim is None else x.mean(dim)


def broadcast(x, shape):
    return x.expand(*shape)


def masked_softmax(logits, mask):
    """Softmax over the last axis restricted to ``mask``.

    Disallowed entries get exactly zero weight; a row with no allowed entry
    returns all zeros instead of NaN.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool, device=logits.device)
    if mask.shape != logits.shape[-mask.dim():]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match logits {tuple(logits.shape)}")
    # additive bias over the (small) mask shape is much cheaper than a broadcast masked_fill
    bias = torch.zeros(mask.shape, dtype=logits.dtype).masked_fill(~mask, float("-inf"))
    weights = torch.softmax(logits + bias, dim=-1)
    empty = ~mask.any(dim=-1, keepdim=True)
    if empty.any():
        weights = weights.masked_fill(empty, 0.0)
    return weights


def layer_norm(x, gain, bias, eps=LN_EPS):
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


def straight_through(value, surrogate):
    """Return ``value`` in the forward pass while gradients follow ``surrogate``."""
    return surrogate + (value - surrogate).detach()


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "slice": slice_,
    "transpose": transpose,
    "relu": relu,
    "masked_softmax": masked_softmax,
    "layer_norm": layer_norm,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "broadcast": broadcast,
}


def finite_difference_grad(fn, inputs, step=1e-4):
    """Central-difference gradient of scalar ``fn(*inputs)`` w.r.t. every input.

    Works on float64 copies; ``inputs`` are left untouched.
    """
    base = [t.detach().to(torch.float64).clone() for t in inputs]
    grads = []
    with torch.no_grad():
        for idx, t in enumerate(base):
            g = torch.zeros_like(t)
            flat = t.view(-1)
            gflat = g.view(-1)
            for e in range(flat.numel()):
                orig = flat[e].item()
                flat[e] = orig + step
                hi = float(fn(*base))
                flat[e] = orig - step
                lo = float(fn(*base))
                flat[e] = orig
                gflat[e] = (hi - lo) / (2 * step)
            grads.append(g)
    return grads


def analytic_grad(fn, inputs):
    leaves = [t.detach().to(torch.float64).clone().requires_grad_(True) for t in inputs]
    out = fn(*leaves)
    out.backward()
    return [t.grad if t.grad is not None else torch.zeros_like(t) for t in leaves]


def relative_error(a, b) -> float:
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    scale = max(a.abs().max().item(), b.abs().max().item(), 1e-12)
    return (a - b).abs().max().item() / scale


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One in-place Adam update with bias correction.

    Args:
        params: list of tensors, updated in place.
        grads: matching gradients; ``None`` entries are skipped.
        state: dict holding ``step``, ``m`` and ``v`` lists; created on first call.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    b1, b2 = betas
    if not state:
        state["step"] = 0
        state["m"] = [torch.zeros_like(p) for p in params]
        state["v"] = [torch.zeros_like(p) for p in params]
    state["step"] += 1
    t = state["step"]
    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state["m"], state["v"]):
            if g is None:
                continue
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return params, state


def cosine_lr(step, total_steps, lr_max=1e-4, lr_min=5e-7):
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total_steps))


def _as_numpy(t) -> np.ndarray:
    return t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    return {
        "shape": list(arr.shape),
        "dtype": arr.dtype.str,
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()


def save_checkpoint(path, tensors: dict, meta: dict):
    """Write named tensors plus JSON-serializable metadata.

    Tensor bytes are stored little-endian and base64 encoded, so reloading is
    bit exact.
    """
    payload = {
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "tensors": {name: _encode_array(_as_numpy(t)) for name, t in tensors.items()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    tensors = {name: _decode_array(obj) for name, obj in payload["tensors"].items()}
    return tensors, payload["meta"]
