"""Frozen integer-path decoder: file format and a numpy-only forward pass.

Nothing here imports torch, so a frozen model can be loaded and run without
the training stack.

Byte layout (all little-endian)::

    offset 0   8 bytes   magic b"AECCTFRZ"
    offset 8   uint32    format version
    offset 12  uint32    header length L
    offset 16  L bytes   UTF-8 JSON header
    offset 16+L          blob area

The header holds the model config, code name, the parity-check matrix as a
list of rows, its fingerprint, ``qb`` and a ``blobs`` table of
``name -> {offset, nbytes, kind, shape}`` where ``offset`` is relative to the
blob area. ``kind`` is ``"f4"`` for float32 tensors or ``"t2"`` for 2-bit
packed ternary weights (codes 00=0, 01=+1, 11=-1, four per byte, low bits
first). Each AAP layer entry in ``layers`` lists its weight blob, bias blob
and FP32 scale.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tanner
from .channel import preprocess, recover_codeword
from .codes import CodeMismatchError, ParityCheck
from .evaluation import attention_ops, layer_norm_ops, linear_ops
from .quant import QB, TernaryPackedLayer, aap_linear_infer

MAGIC = b"AECCTFRZ"
FORMAT_VERSION = 1
LN_EPS = 1e-5
LINEARS = ("q", "k", "v", "o", "ff1", "ff2")


class FrozenFormatError(ValueError):
    pass


def _layer_norm(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _softmax_rows(scores, mask):
    scores = np.where(mask, scores, -np.inf)
    peak = scores.max(axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(mask, np.exp(scores - peak), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def dense_masked_attention(q, k, v, mask):
    """Reference attention. q, k, v: (..., heads, nodes, dh); mask: (heads, nodes, nodes)."""
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1]).astype(q.dtype)
    return _softmax_rows(scores, mask) @ v


@dataclass(frozen=True)
class _SparsePattern:
    rows: np.ndarray
    cols: np.ndarray
    seg_start: np.ndarray  # start offset of each non-empty row's run
    seg_rows: np.ndarray   # which rows are non-empty

    @classmethod
    def from_mask(cls, mask):
        rows, cols = np.nonzero(mask)
        seg_rows, seg_start = np.unique(rows, return_index=True)
        return cls(rows, cols, seg_start, seg_rows)


def sparse_masked_attention(q, k, v, pattern: _SparsePattern):
    """Attention evaluating only the allowed (row, col) pairs of one shared mask.

    q, k, v: (..., heads, nodes, dh) for the heads sharing ``pattern``.
    """
    out = np.zeros_like(q)
    if pattern.rows.size == 0:
        return out
    scale = q.dtype.type(1.0 / math.sqrt(q.shape[-1]))
    s = np.einsum("...pd,...pd->...p", q[..., pattern.rows, :], k[..., pattern.cols, :]) * scale
    peak = np.maximum.reduceat(s, pattern.seg_start, axis=-1)
    counts = np.diff(np.append(pattern.seg_start, pattern.rows.size))
    e = np.exp(s - np.repeat(peak, counts, axis=-1))
    denom = np.add.reduceat(e, pattern.seg_start, axis=-1)
    w = e / np.repeat(denom, counts, axis=-1)
    ctx = np.add.reduceat(w[..., None] * v[..., pattern.cols, :], pattern.seg_start, axis=-2)
    out[..., pattern.seg_rows, :] = ctx
    return out


class FrozenAECCT:
    """Integer-path AECCT: ternary encoder linears, FP32 embedding, SPE table and head."""

    def __init__(self, pc: ParityCheck, config: dict, tensors: dict, layers: dict, qb: int = QB):
        self.pc = pc
        self.config = dict(config)
        self.tensors = {k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}
        self.layers = layers  # "blocks.{b}.{name}" -> TernaryPackedLayer
        self.qb = qb
        graph = tanner.build_graph(pc)
        masks = tanner.build_masks(graph)
        heads = config["heads"]
        if config["attention_mode"] == "CASA":
            self.head_groups = [(0, heads, masks.ecct)]
        else:
            hf = config["h_first"]
            self.head_groups = [(0, hf, masks.first_ring), (hf, heads, masks.second_ring)]
        self._patterns = [_SparsePattern.from_mask(m) for _, _, m in self.head_groups]
        self._dist = tanner.distances(graph, 2)

    @property
    def n_blocks(self) -> int:
        return self.config["n_blocks"]

    def _linear(self, x, name, counter=None):
        layer = self.layers[name]
        if counter is not None:
            plan = layer.plan
            linear_ops(counter, x.shape[-2], *layer.shape[::-1], quantized=True,
                       nonzero=plan.pos_idx.size + plan.neg_idx.size)
        # one activation scale per sample matrix (nodes x features)
        return aap_linear_infer(x, layer, act_axes=(-2, -1)).astype(x.dtype)

    def _attention(self, x, b, sparse, counter=None):
        heads = self.config["heads"]
        B, nodes, d = x.shape
        dh = d // heads

        def split(t):
            return t.reshape(B, nodes, heads, dh).transpose(0, 2, 1, 3)

        q = split(self._linear(x, f"blocks.{b}.q", counter))
        k = split(self._linear(x, f"blocks.{b}.k", counter))
        v = split(self._linear(x, f"blocks.{b}.v", counter))
        ctx = np.empty_like(q)
        for (lo, hi, mask), pattern in zip(self.head_groups, self._patterns):
            sl = slice(lo, hi)
            if counter is not None:
                attention_ops(counter, self._dist[pattern.rows, pattern.cols], hi - lo, dh)
            if sparse:
                ctx[:, sl] = sparse_masked_attention(q[:, sl], k[:, sl], v[:, sl], pattern)
            else:
                ctx[:, sl] = dense_masked_attention(q[:, sl], k[:, sl], v[:, sl], mask[None])
        ctx = ctx.transpose(0, 2, 1, 3).reshape(B, nodes, d)
        return self._linear(ctx, f"blocks.{b}.o", counter)

    def forward(self, features, sparse: bool = True, dtype=np.float32, counter=None):
        """Noise logits (batch, n) from features (batch, 2n-k).

        Args:
            sparse: evaluate attention only on allowed pairs (else masked dense).
            dtype: float type of the non-integer arithmetic.
            counter: optional op tally (``add(category, **ops)``), incremented
                with the per-frame arithmetic actually executed.
        """
        if counter is not None and not sparse:
            raise ValueError("op counting follows the sparse attention path")
        t = {k: v.astype(dtype, copy=False) for k, v in self.tensors.items()}
        features = np.asarray(features, dtype=dtype)
        squeeze = features.ndim == 1
        features = np.atleast_2d(features)
        x = features[..., None] * t["embed"]
        nodes, d_chan = t["embed"].shape
        if counter is not None:
            counter.add("misc", fp32_mul=nodes * d_chan)
        if "spe_table" in t:
            x = np.concatenate([x, np.broadcast_to(t["spe_table"], x.shape[:-2] + t["spe_table"].shape)],
                               axis=-1)
        d = x.shape[-1]
        for b in range(self.n_blocks):
            x = _layer_norm(x + self._attention(x, b, sparse, counter), t[f"blocks.{b}.ln1.weight"],
                            t[f"blocks.{b}.ln1.bias"])
            hidden = np.maximum(self._linear(x, f"blocks.{b}.ff1", counter), 0)
            x = _layer_norm(x + self._linear(hidden, f"blocks.{b}.ff2", counter),
                            t[f"blocks.{b}.ln2.weight"], t[f"blocks.{b}.ln2.bias"])
            if counter is not None:
                counter.add("misc", fp32_add=2 * nodes * d)
                layer_norm_ops(counter, nodes, d)
                layer_norm_ops(counter, nodes, d)
        scalar = x @ t["to_scalar.weight"][0] + t["to_scalar.bias"][0]
        logits = scalar @ t["out.weight"].T + t["out.bias"]
        if counter is not None:
            n = t["out.bias"].size
            counter.add("misc", fp32_mul=nodes * d + nodes * n, fp32_add=nodes * d + nodes * n)
        return logits[0] if squeeze else logits

    def predict_logits(self, y, sparse: bool = True, dtype=np.float32, counter=None):
        return self.forward(preprocess(np.asarray(y), self.pc).features, sparse=sparse, dtype=dtype,
                            counter=counter)

    def decode(self, y):
        return recover_codeword(y, self.predict_logits(y))

    def zero_fractions(self) -> dict:
        return {name: layer.zero_fraction() for name, layer in self.layers.items()}

    # -- serialization --------------------------------------------------------

    def to_bytes(self) -> bytes:
        blobs = []
        table = {}
        offset = 0

        def put(name, raw, kind, shape):
            nonlocal offset
            table[name] = {"offset": offset, "nbytes": len(raw), "kind": kind, "shape": list(shape)}
            blobs.append(raw)
            offset += len(raw)

        for name, arr in sorted(self.tensors.items()):
            put(name, np.ascontiguousarray(arr, dtype="<f4").tobytes(), "f4", arr.shape)
        layer_meta = {}
        for name, layer in sorted(self.layers.items()):
            put(f"{name}.weight", layer.packed, "t2", layer.shape)
            put(f"{name}.bias", np.ascontiguousarray(layer.bias, dtype="<f4").tobytes(), "f4",
                layer.bias.shape)
            layer_meta[name] = {"weight": f"{name}.weight", "bias": f"{name}.bias",
                                "shape": list(layer.shape), "scale": layer.scale}
        header = {
            "config": self.config,
            "code": {"name": self.pc.name, "h": self.pc.h.astype(int).tolist(),
                     "fingerprint": self.pc.fingerprint()},
            "qb": self.qb,
            "tensors": sorted(self.tensors),
            "layers": layer_meta,
            "blobs": table,
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        return MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + b"".join(blobs)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes, pc: ParityCheck | None = None) -> "FrozenAECCT":
        try:
            return cls._parse(raw, pc)
        except (FrozenFormatError, CodeMismatchError):
            raise
        except (ValueError, KeyError, TypeError, struct.error) as exc:
            raise FrozenFormatError(f"corrupt frozen model: {exc}") from exc

    @classmethod
    def _parse(cls, raw: bytes, pc: ParityCheck | None) -> "FrozenAECCT":
        if raw[:8] != MAGIC:
            raise FrozenFormatError("not a frozen AECCT file (bad magic)")
        version, hlen = struct.unpack("<II", raw[8:16])
        if version != FORMAT_VERSION:
            raise FrozenFormatError(f"unsupported frozen format version {version}")
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        area = memoryview(raw)[16 + hlen:]
        code = header["code"]
        stored = ParityCheck(np.array(code["h"], dtype=np.uint8), name=code["name"])
        if stored.fingerprint() != code["fingerprint"]:
            raise FrozenFormatError("stored parity-check matrix does not match its fingerprint")
        if pc is not None and pc.fingerprint() != stored.fingerprint():
            raise CodeMismatchError(f"frozen model was built for {stored.name!r}, not {pc.name!r}")

        def blob(name):
            entry = header["blobs"][name]
            chunk = bytes(area[entry["offset"]:entry["offset"] + entry["nbytes"]])
            if len(chunk) != entry["nbytes"]:
                raise FrozenFormatError(f"truncated blob {name!r}")
            if entry["kind"] == "f4":
                return np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
            return chunk

        tensors = {name: blob(name) for name in header["tensors"]}
        layers = {
            name: TernaryPackedLayer(packed=blob(meta["weight"]), shape=tuple(meta["shape"]),
                                     scale=float(meta["scale"]), bias=blob(meta["bias"]),
                                     qb=header["qb"])
            for name, meta in header["layers"].items()
        }
        return cls(pc or stored, header["config"], tensors, layers, qb=header["qb"])

    @classmethod
    def load(cls, path, pc: ParityCheck | None = None) -> "FrozenAECCT":
        return cls.from_bytes(Path(path).read_bytes(), pc)
