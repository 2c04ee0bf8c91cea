"""Transformer decoder with head-partitioned masked attention and spectral positional encoding."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import torch
import torch.nn as nn

from . import tanner
from .autodiff import LN_EPS, layer_norm, masked_softmax, relu
from .channel import preprocess, recover_codeword
from .codes import ParityCheck
from .qat import AAPLinear, abs_percentile

HPSA = "HPSA"
CASA = "CASA"
FP32 = "FP32"
AAP = "AAP"


@dataclass
class ModelConfig:
    n_blocks: int = 2
    dim: int = 32
    heads: int = 8
    h_first: int = 4
    h_second: int = 4
    d_spe: int = 8
    spe_heads: int = 4
    ffn_mult: int = 4
    attention_mode: str = HPSA
    quant_mode: str = FP32
    p: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0 <= self.d_spe < self.dim:
            raise ValueError("d_spe must satisfy 0 <= d_spe < dim")
        if self.attention_mode not in (HPSA, CASA):
            raise ValueError(f"unknown attention mode {self.attention_mode!r}")
        if self.quant_mode not in (FP32, AAP):
            raise ValueError(f"unknown quant mode {self.quant_mode!r}")
        if self.attention_mode == HPSA:
            if self.h_first < 1 or self.h_second < 1:
                raise ValueError("HPSA needs h_first >= 1 and h_second >= 1")
            if self.h_first + self.h_second != self.heads:
                raise ValueError("h_first + h_second must equal heads")
        if self.d_spe and self.d_spe % self.spe_heads:
            raise ValueError("d_spe must be divisible by spe_heads")

    @property
    def d_head(self) -> int:
        return self.dim // self.heads

    @property
    def d_chan(self) -> int:
        return self.dim - self.d_spe

    def to_text(self) -> str:
        """Plain ``key = value`` lines."""
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kind = types[key]
            kwargs[key] = (int(value) if kind in (int, "int")
                           else float(value) if kind in (float, "float") else value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def head_masks(masks: tanner.TannerMasks, cfg: ModelConfig) -> np.ndarray:
    """Boolean (heads, nodes, nodes): first-ring heads, then second-ring heads."""
    if cfg.attention_mode == CASA:
        return np.repeat(masks.ecct[None], cfg.heads, axis=0)
    return np.concatenate([
        np.repeat(masks.first_ring[None], cfg.h_first, axis=0),
        np.repeat(masks.second_ring[None], cfg.h_second, axis=0),
    ])


def multi_head_attention(x, wq, wk, wv, wo, heads, mask=None, return_weights=False):
    """Scaled dot-product attention over the node axis with per-head boolean masks.

    Args:
        x: (..., nodes, d).
        wq, wk, wv, wo: callables mapping d -> d.
        mask: (heads, nodes, nodes) or None for unmasked attention.
    """
    *lead, nodes, d = x.shape
    dh = d // heads

    def split(t):
        return t.reshape(*lead, nodes, heads, dh).transpose(-3, -2)

    q, k, v = split(wq(x)), split(wk(x)), split(wv(x))
    scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
    if mask is None:
        mask = torch.ones(scores.shape[-3:], dtype=torch.bool)
    weights = masked_softmax(scores, mask)
    out = (weights @ v).transpose(-3, -2).reshape(*lead, nodes, d)
    out = wo(out)
    return (out, weights) if return_weights else out


class SpectralPE(nn.Module):
    """Learned per-node encoding from (eigenvalue, eigenvector entry) pairs.

    For node j the (nodes x 2) table of (lambda_i, phi_i[j]) is projected to
    d_spe, passed through one self-attention layer and reduced over the
    eigen-index axis by a learned linear map.
    """

    def __init__(self, basis: tanner.SpectralBasis, d_spe: int, heads: int):
        super().__init__()
        feats = torch.as_tensor(tanner.spe_all_features(basis), dtype=torch.float32)
        self.register_buffer("features", feats)
        nodes = feats.shape[0]
        self.heads = heads
        self.proj = nn.Linear(2, d_spe)
        self.q = nn.Linear(d_spe, d_spe)
        self.k = nn.Linear(d_spe, d_spe)
        self.v = nn.Linear(d_spe, d_spe)
        self.o = nn.Linear(d_spe, d_spe)
        self.reduce = nn.Linear(nodes, 1)

    def forward(self):
        h = self.proj(self.features)  # (J, I, d_spe)
        h = multi_head_attention(h, self.q, self.k, self.v, self.o, self.heads)
        return self.reduce(h.transpose(-2, -1)).squeeze(-1)  # (J, d_spe)


class EncoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.dim
        self.heads = cfg.heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.ff1 = nn.Linear(d, cfg.ffn_mult * d)
        self.ff2 = nn.Linear(cfg.ffn_mult * d, d)
        self.ln1 = nn.LayerNorm(d, eps=LN_EPS)
        self.ln2 = nn.LayerNorm(d, eps=LN_EPS)

    LINEARS = ("q", "k", "v", "o", "ff1", "ff2")

    def forward(self, x, mask, return_weights=False):
        attn, weights = multi_head_attention(x, self.q, self.k, self.v, self.o, self.heads,
                                             mask, return_weights=True)
        x = layer_norm(x + attn, self.ln1.weight, self.ln1.bias)
        x = layer_norm(x + self.ff2(relu(self.ff1(x))), self.ln2.weight, self.ln2.bias)
        return (x, weights) if return_weights else x


class AECCT(nn.Module):
    """Noise-predicting transformer decoder for one code.

    Input: (batch, 2n-k) features ``[|y|, 1 - 2 s(y)]``; output: (batch, n)
    logits, positive where the bit of bin(y) should be flipped.
    """

    def __init__(self, pc: ParityCheck, cfg: ModelConfig, seed: int | None = 0):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.pc = pc
        self.cfg = cfg = replace(cfg)
        want_aap = cfg.quant_mode == AAP
        cfg.quant_mode = FP32
        graph = tanner.build_graph(pc)
        self.masks = tanner.build_masks(graph)
        nodes = graph.n_nodes
        self.register_buffer("head_mask", torch.as_tensor(head_masks(self.masks, cfg)))
        self.embed = nn.Parameter(torch.empty(nodes, cfg.d_chan))
        nn.init.xavier_uniform_(self.embed)
        self.spe = SpectralPE(tanner.spectral_basis(graph), cfg.d_spe, cfg.spe_heads) if cfg.d_spe else None
        self.register_buffer("spe_cache", torch.zeros(0), persistent=False)
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_blocks))
        self.to_scalar = nn.Linear(cfg.dim, 1)
        self.out = nn.Linear(nodes, pc.n)
        # zero logits at init: an untrained decoder returns the hard decision
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        if want_aap:
            self.quantize_()

    @property
    def n_nodes(self) -> int:
        return self.embed.shape[0]

    def quantize_(self):
        """Swap every encoder-block linear for an AAP layer seeded with its weights."""
        if self.cfg.quant_mode == AAP:
            return self
        for block in self.blocks:
            for name in EncoderBlock.LINEARS:
                lin = getattr(block, name)
                setattr(block, name, AAPLinear.from_linear(lin, p=self.cfg.p))
        self.cfg.quant_mode = AAP
        return self

    def aap_layers(self):
        for b, block in enumerate(self.blocks):
            for name in EncoderBlock.LINEARS:
                layer = getattr(block, name)
                if isinstance(layer, AAPLinear):
                    yield f"blocks.{b}.{name}", layer

    def clamp_deltas_(self):
        for _, layer in self.aap_layers():
            layer.clamp_delta_()

    def spe_table(self):
        """Per-node SPE rows; recomputed while training, cached in eval mode."""
        if self.spe is None:
            return None
        if self.training:
            self.spe_cache = torch.zeros(0)
            return self.spe()
        if self.spe_cache.numel() == 0:
            with torch.no_grad():
                self.spe_cache = self.spe().detach()
        return self.spe_cache

    def train(self, mode: bool = True):
        if mode:
            self.spe_cache = torch.zeros(0)
        return super().train(mode)

    def load_state_dict(self, state_dict, strict: bool = True):
        self.spe_cache = torch.zeros(0)
        return super().load_state_dict(state_dict, strict)

    def embed_features(self, features):
        features = torch.as_tensor(features, dtype=self.embed.dtype)
        if features.shape[-1] != self.n_nodes:
            raise ValueError(f"expected {self.n_nodes} features, got {features.shape[-1]}")
        phi = features.unsqueeze(-1) * self.embed
        spe = self.spe_table()
        if spe is not None:
            phi = torch.cat([phi, spe.to(phi.dtype).expand(*phi.shape[:-2], *spe.shape)], dim=-1)
        return phi

    def forward(self, features, return_weights=False):
        phi = self.embed_features(features)
        weights = []
        for block in self.blocks:
            if return_weights:
                phi, w = block(phi, self.head_mask, return_weights=True)
                weights.append(w)
            else:
                phi = block(phi, self.head_mask)
        logits = self.out(self.to_scalar(phi).squeeze(-1))
        return (logits, weights) if return_weights else logits

    @torch.no_grad()
    def predict_logits(self, y):
        features = preprocess(np.asarray(y), self.pc).features
        was_training = self.training
        self.eval()
        try:
            return self(torch.as_tensor(features, dtype=self.embed.dtype)).numpy()
        finally:
            self.train(was_training)

    def decode(self, y):
        return recover_codeword(y, self.predict_logits(y))

    def freeze(self):
        """Integer-path copy: packed ternary encoder linears plus FP32 everything else."""
        from .inference import FrozenAECCT

        if self.cfg.quant_mode != AAP:
            raise ValueError("only an AAP model can be frozen")
        was_training = self.training
        self.eval()
        tensors = {"embed": self.embed, "to_scalar.weight": self.to_scalar.weight,
                   "to_scalar.bias": self.to_scalar.bias, "out.weight": self.out.weight,
                   "out.bias": self.out.bias}
        spe = self.spe_table()
        if spe is not None:
            tensors["spe_table"] = spe
        for b, block in enumerate(self.blocks):
            for ln in ("ln1", "ln2"):
                tensors[f"blocks.{b}.{ln}.weight"] = getattr(block, ln).weight
                tensors[f"blocks.{b}.{ln}.bias"] = getattr(block, ln).bias
        tensors = {k: v.detach().cpu().numpy() for k, v in tensors.items()}
        layers = {name: layer.freeze() for name, layer in self.aap_layers()}
        self.train(was_training)
        return FrozenAECCT(self.pc, self.cfg.to_dict(), tensors, layers)

    @torch.no_grad()
    def align_to_frozen_(self, frozen):
        """Load the exact values a frozen copy holds (FP32 scales, SPE table).

        Afterwards the real-arithmetic forward and the integer path see
        identical numbers, so their logits differ only by summation order.
        """
        self.eval()
        for name, layer in self.aap_layers():
            gamma = abs_percentile(layer.weight, layer.p)
            layer.delta.copy_(torch.as_tensor(frozen.layers[name].scale, dtype=gamma.dtype) / gamma)
        if self.spe is not None:
            self.spe_cache = torch.as_tensor(frozen.tensors["spe_table"], dtype=self.embed.dtype)
        return self

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
