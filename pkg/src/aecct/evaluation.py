"""Monte-Carlo BER sweeps and the sparsity, complexity, energy and compression analyses."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr

from . import tanner
from .bp import bp_decode
from .channel import ebn0_to_sigma, hard_decision, modulate, recover_codeword, transmit
from .codes import ParityCheck, derive_generator, encode

OP_KINDS = ("fp32_mul", "fp32_add", "int8_add", "int8_mul", "fp32_other")
ENERGY_KINDS = ("fp32_mul", "fp32_add", "int8_add", "int8_mul")


# -- BER sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class StoppingRule:
    min_errors: int = 500
    max_frames: int = 1_000_000
    batch_frames: int = 1000

    def __post_init__(self):
        if self.min_errors < 1 or self.max_frames < 1 or self.batch_frames < 1:
            raise ValueError("stopping rule values must be positive")


@dataclass(frozen=True)
class EvalPoint:
    ebn0_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    n: int

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.frames * self.n)

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames

    @property
    def neg_ln_ber(self) -> float | None:
        return None if self.bit_errors == 0 else -math.log(self.ber)

    def std_error(self) -> float:
        """Binomial standard error of the BER estimate."""
        bits = self.frames * self.n
        return math.sqrt(max(self.ber * (1 - self.ber), 0.0) / bits)

    def to_dict(self) -> dict:
        return {"ebn0_db": self.ebn0_db, "frames": self.frames, "bit_errors": self.bit_errors,
                "ber": self.ber, "neg_ln_ber": self.neg_ln_ber, "frame_errors": self.frame_errors,
                "fer": self.fer}


@dataclass
class EvalReport:
    decoder: str
    code: str
    seed: int
    mode: str
    stopping: StoppingRule
    points: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"decoder": self.decoder, "code": self.code, "seed": self.seed, "mode": self.mode,
                "stopping": asdict(self.stopping), "points": [p.to_dict() for p in self.points]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["ebn0_db", "frames", "bit_errors", "ber", "neg_ln_ber", "frame_errors", "fer"]
        writer = csv.DictWriter(buf, fieldnames=["decoder", "code"] + cols, lineterminator="\n")
        writer.writeheader()
        for p in self.points:
            row = p.to_dict()
            writer.writerow({"decoder": self.decoder, "code": self.code,
                             **{c: "" if row[c] is None else row[c] for c in cols}})
        return buf.getvalue()

    def neg_ln_ber(self) -> dict:
        return {p.ebn0_db: p.neg_ln_ber for p in self.points}


Decoder = Callable[[np.ndarray, float], np.ndarray]


def uncoded_decoder(y, sigma):
    return hard_decision(y)


def bp_decoder(pc: ParityCheck, iters: int = 5) -> Decoder:
    def decode(y, sigma):
        return bp_decode(pc, y, sigma, max_iters=iters).bits
    return decode


def logits_decoder(model) -> Decoder:
    """Wrap anything with ``predict_logits(y)`` (torch model, frozen model, estimator)."""
    def decode(y, sigma):
        return recover_codeword(y, model.predict_logits(y))
    return decode


def snr_rng(seed: int, ebn0_db: float) -> np.random.Generator:
    """Noise stream keyed on (seed, Eb/N0) so different decoders see paired noise."""
    return np.random.default_rng([seed, int(round((ebn0_db + 100.0) * 1000))])


def ber_sweep(decode: Decoder, pc: ParityCheck, ebn0_list, stopping: StoppingRule = StoppingRule(),
              seed: int = 0, mode: str = "zero", decoder_id: str = "decoder") -> EvalReport:
    """Simulate until ``min_errors`` bit errors or ``max_frames`` frames at each Eb/N0.

    Args:
        decode: maps (channel output batch, sigma) to hard codeword estimates.
        mode: ``"zero"`` transmits the all-zero codeword; ``"random"`` encodes
            uniformly random messages.
    """
    if mode not in ("zero", "random"):
        raise ValueError("mode must be 'zero' or 'random'")
    gen = derive_generator(pc) if mode == "random" else None
    report = EvalReport(decoder=decoder_id, code=pc.name, seed=seed, mode=mode, stopping=stopping)
    for eb in ebn0_list:
        eb = float(eb)
        rng = snr_rng(seed, eb)
        sigma = float(ebn0_to_sigma(eb, pc.rate))
        frames = bit_errors = frame_errors = 0
        while bit_errors < stopping.min_errors and frames < stopping.max_frames:
            batch = min(stopping.batch_frames, stopping.max_frames - frames)
            if gen is None:
                x = np.zeros((batch, pc.n), dtype=np.uint8)
            else:
                x = encode(gen, rng.integers(0, 2, size=(batch, pc.k)))
            y = transmit(modulate(x), eb, pc.rate, rng).y
            wrong = np.asarray(decode(y, sigma), dtype=np.uint8) != x
            bit_errors += int(wrong.sum())
            frame_errors += int(wrong.any(axis=1).sum())
            frames += batch
        report.points.append(EvalPoint(eb, frames, bit_errors, frame_errors, pc.n))
    return report


def bp_sweep(pc: ParityCheck, ebn0_list, iters: int = 5, stopping: StoppingRule = StoppingRule(),
             seed: int = 0) -> EvalReport:
    return ber_sweep(bp_decoder(pc, iters), pc, ebn0_list, stopping, seed, decoder_id=f"bp(L={iters})")


def uncoded_ber(ebn0_db, rate: float):
    """Q(1/sigma) for hard-decision BPSK at the coded noise level."""
    return ndtr(-1.0 / ebn0_to_sigma(ebn0_db, rate))


def within_mc_error(a: EvalPoint, b: EvalPoint, z: float = 3.0) -> bool:
    """Whether two BER estimates agree within ``z`` combined standard errors."""
    return abs(a.ber - b.ber) <= z * math.hypot(a.std_error(), b.std_error())


# -- operation counts -------------------------------------------------------------

@dataclass
class OpCountReport:
    """Arithmetic per decoded frame, broken down by component.

    Categories: ``linear`` (encoder-block linears), ``attention_first_ring``
    and ``attention_second_ring`` (query-key products between distinct nodes
    at distance 1 and 2), ``misc`` (everything else: self pairs, score
    scaling, softmax, value mixing, residuals, LayerNorm, embedding, head).
    ``fp32_other`` counts exp, sqrt and divisions, which carry no energy constant.
    """

    breakdown: dict = field(default_factory=dict)

    def add(self, category: str, **ops):
        row = self.breakdown.setdefault(category, dict.fromkeys(OP_KINDS, 0))
        for kind, value in ops.items():
            if kind not in OP_KINDS:
                raise KeyError(kind)
            row[kind] += int(value)

    def total(self, kind: str) -> int:
        return sum(row[kind] for row in self.breakdown.values())

    @property
    def fp32_mul(self) -> int:
        return self.total("fp32_mul")

    @property
    def fp32_add(self) -> int:
        return self.total("fp32_add")

    @property
    def int8_add(self) -> int:
        return self.total("int8_add")

    def totals(self) -> dict:
        return {kind: self.total(kind) for kind in OP_KINDS}

    def category(self, name: str) -> dict:
        return dict(self.breakdown.get(name, dict.fromkeys(OP_KINDS, 0)))

    def to_dict(self) -> dict:
        return {"totals": self.totals(), "breakdown": {k: dict(v) for k, v in self.breakdown.items()}}


def linear_ops(counter, rows: int, d_in: int, d_out: int, quantized: bool, nonzero: int | None = None):
    """Ops of one linear layer applied to ``rows`` node vectors.

    AAP: one FP32 multiply per input (quantize) and per output (dequantize),
    one INT8 accumulation per nonzero weight, one FP32 bias add per output,
    plus three scalar ops for the per-frame scales. FP32: one multiply and
    one add (accumulate or bias) per weight.
    """
    if quantized:
        nonzero = d_in * d_out if nonzero is None else nonzero
        counter.add("linear", fp32_mul=rows * (d_in + d_out), fp32_add=rows * d_out,
                    int8_add=rows * nonzero)
        counter.add("misc", fp32_mul=2, fp32_other=1)
    else:
        counter.add("linear", fp32_mul=rows * d_in * d_out, fp32_add=rows * d_in * d_out)


def layer_norm_ops(counter, rows: int, d: int):
    """Per row: mean, centring, variance, scale, gain and bias."""
    counter.add("misc", fp32_add=rows * (4 * d + 1), fp32_mul=rows * (3 * d + 2),
                fp32_other=rows * 2)


def attention_ops(counter, pair_dist: np.ndarray, heads: int, d_head: int):
    """Ops of ``heads`` heads over the allowed pairs whose hop distances are ``pair_dist``."""
    width = heads * d_head
    n_pairs = int(pair_dist.size)
    ring1 = int(np.sum(pair_dist == 1))
    ring2 = int(np.sum(pair_dist == 2))
    self_pairs = n_pairs - ring1 - ring2
    counter.add("attention_first_ring", fp32_mul=ring1 * width, fp32_add=ring1 * width)
    counter.add("attention_second_ring", fp32_mul=ring2 * width, fp32_add=ring2 * width)
    # self-pair scores, scaling, max-shift, exp, row sums, normalizing, value mixing
    counter.add("misc", fp32_mul=self_pairs * width + n_pairs * heads + n_pairs * width,
                fp32_add=self_pairs * width + 2 * n_pairs * heads + n_pairs * width,
                fp32_other=2 * n_pairs * heads)


def head_groups(cfg, masks: tanner.TannerMasks):
    """(heads, mask) per group sharing one attention pattern."""
    if cfg["attention_mode"] == "CASA":
        return [(cfg["heads"], masks.ecct)]
    return [(cfg["h_first"], masks.first_ring), (cfg["heads"] - cfg["h_first"], masks.second_ring)]


def _cfg_dict(cfg) -> dict:
    return cfg if isinstance(cfg, dict) else cfg.to_dict()


def complexity_report(cfg, pc: ParityCheck, quantized: bool | None = None) -> OpCountReport:
    """Symbolic per-frame op counts of the decoder described by ``cfg`` on ``pc``.

    Args:
        cfg: ModelConfig or its dict form.
        quantized: count encoder linears as AAP (default: from ``cfg.quant_mode``).
    """
    cfg = _cfg_dict(cfg)
    if quantized is None:
        quantized = cfg["quant_mode"] == "AAP"
    graph = tanner.build_graph(pc)
    masks = tanner.build_masks(graph)
    dist = tanner.distances(graph, 2)
    nodes, d = graph.n_nodes, cfg["dim"]
    d_head = d // cfg["heads"]
    wide = cfg["ffn_mult"] * d
    report = OpCountReport()
    report.add("misc", fp32_mul=nodes * (d - cfg["d_spe"]))  # embedding
    for _ in range(cfg["n_blocks"]):
        for d_in, d_out in ((d, d), (d, d), (d, d)):
            linear_ops(report, nodes, d_in, d_out, quantized)
        for heads, mask in head_groups(cfg, masks):
            attention_ops(report, dist[mask], heads, d_head)
        linear_ops(report, nodes, d, d, quantized)
        linear_ops(report, nodes, d, wide, quantized)
        linear_ops(report, nodes, wide, d, quantized)
        report.add("misc", fp32_add=2 * nodes * d)  # residuals
        layer_norm_ops(report, nodes, d)
        layer_norm_ops(report, nodes, d)
    report.add("misc", fp32_mul=nodes * d + nodes * pc.n, fp32_add=nodes * d + nodes * pc.n)  # head
    return report


def instrumented_op_count(frozen, y) -> OpCountReport:
    """Per-frame op counts tallied while the frozen model decodes one frame."""
    counter = OpCountReport()
    frozen.predict_logits(np.asarray(y, dtype=np.float64)[None], counter=counter)
    return counter


def bp_complexity(pc: ParityCheck, iters: int) -> OpCountReport:
    """Sum-product BP per frame.

    Per iteration and edge: two phi evaluations (``fp32_other``), one sign
    multiply, and five adds (prefix and suffix sums plus their combination on
    the check side, the posterior sum and the extrinsic subtraction on the
    variable side). The one-off channel LLR scaling is not counted.
    """
    edges = int(pc.h.sum())
    report = OpCountReport()
    report.add("bp", fp32_mul=edges * iters, fp32_add=5 * edges * iters,
               fp32_other=2 * edges * iters)
    return report


# -- energy ---------------------------------------------------------------------

class MissingConstantError(KeyError):
    pass


@dataclass(frozen=True)
class EnergyModel:
    """Joules per operation for each process-node tag; always user supplied."""

    constants: dict  # node -> {op kind -> joules}

    def __post_init__(self):
        for node, table in self.constants.items():
            if not isinstance(table, dict):
                raise ValueError(f"{node}: expected a table of op kind -> joules")
            for kind, value in table.items():
                if kind not in ENERGY_KINDS:
                    raise ValueError(f"{node}: unknown op kind {kind!r}")
                if not value > 0:
                    raise ValueError(f"{node}: constant for {kind} must be positive")

    @classmethod
    def load(cls, path) -> "EnergyModel":
        """JSON ``{"7nm": {"fp32_mul": 1.3e-12, ...}, ...}``; values in joules."""
        return cls(json.loads(Path(path).read_text()))

    def joules(self, ops: dict, node: str) -> float:
        table = self.constants[node]
        total = 0.0
        for kind in ENERGY_KINDS:
            count = ops.get(kind, 0)
            if count == 0:
                continue
            if kind not in table:
                raise MissingConstantError(f"no {kind} constant for {node}")
            total += count * table[kind]
        return total


def energy_report(counts: OpCountReport, model: EnergyModel, baseline: OpCountReport) -> dict:
    """Joules per frame and AECCT-vs-baseline ratios per process node.

    ``linear_ratio`` compares the encoder-linear arithmetic including the
    activation quantize/dequantize work, ``weight_ratio`` only the
    weight products (INT8 additions against FP32 multiply-accumulates), and
    ``total_ratio`` every counted op with an energy constant.
    """
    out = {}
    for node in model.constants:
        lin = model.joules(counts.category("linear"), node)
        base_lin = model.joules(baseline.category("linear"), node)
        int8_weights = {k: counts.category("linear")[k] for k in ("int8_add", "int8_mul")}
        weights = model.joules(int8_weights, node) if any(int8_weights.values()) else lin
        tot = model.joules(counts.totals(), node)
        base_tot = model.joules(baseline.totals(), node)
        out[node] = {
            "linear_joules": lin,
            "baseline_linear_joules": base_lin,
            "linear_ratio": base_lin / lin if lin else None,
            "weight_ratio": base_lin / weights if weights else None,
            "total_joules": tot,
            "baseline_total_joules": base_tot,
            "total_ratio": base_tot / tot if tot else None,
        }
    return out


# -- compression ------------------------------------------------------------------

def compression_report(ternary_weights: int, fp32_params: int, scales: int) -> dict:
    """Storage of a quantized model against its all-FP32 counterpart.

    Args:
        ternary_weights: entries of ternary weight matrices.
        fp32_params: every other stored real parameter.
        scales: FP32 scale scalars that exist only in the quantized model.
    """
    total = ternary_weights + fp32_params
    if total == 0:
        raise ValueError("compression ratio is undefined for an empty model")
    bits_fp32 = 32 * total
    bits_q = 2 * ternary_weights + 32 * (fp32_params + scales)
    bits_158 = math.log2(3) * ternary_weights + 32 * (fp32_params + scales)
    return {"bits_fp32": bits_fp32, "bits_quantized": bits_q, "ratio": 1 - bits_q / bits_fp32,
            "bits_quantized_1p58": bits_158, "ratio_1p58": 1 - bits_158 / bits_fp32,
            "ternary_weights": ternary_weights, "fp32_params": fp32_params, "scales": scales}


def model_storage(model) -> tuple[int, int, int]:
    """(ternary weights, other FP32 params, scales) of a torch AECCT or a frozen model.

    For the torch model the learnable deltas fold into the scales; for the
    frozen model the SPE table replaces the SPE module.
    """
    if hasattr(model, "aap_layers"):
        ternary = deltas = 0
        names = set()
        for name, layer in model.aap_layers():
            ternary += layer.weight.numel()
            deltas += layer.delta.numel()
            names.add(name)
        if not names:
            raise ValueError("model has no AAP layers; quantize it first")
        other = sum(p.numel() for p in model.parameters()) - ternary - deltas
        return ternary, other, len(names)
    ternary = sum(int(np.prod(layer.shape)) for layer in model.layers.values())
    other = sum(v.size for v in model.tensors.values()) + sum(l.bias.size for l in model.layers.values())
    return ternary, other, len(model.layers)


# -- sparsity ---------------------------------------------------------------------

LAYER_TYPES = {"q": "qkv", "k": "qkv", "v": "qkv", "o": "attn_out", "ff1": "ffn1", "ff2": "ffn2"}


def weight_sparsity(frozen) -> dict:
    """Mean ternary zero fraction per layer type, averaged over blocks."""
    groups = {}
    for name, layer in frozen.layers.items():
        groups.setdefault(LAYER_TYPES[name.rsplit(".", 1)[-1]], []).append(layer.zero_fraction())
    return {kind: float(np.mean(vals)) for kind, vals in groups.items()}


def attention_sparsity(pc: ParityCheck, h_first: int = 4, h_second: int = 4) -> dict:
    masks = tanner.build_masks(tanner.build_graph(pc))
    return {"code": pc.name, "casa": tanner.mask_sparsity(masks.ecct),
            "hpsa": tanner.hpsa_sparsity(masks, h_first, h_second),
            "first_ring": tanner.mask_sparsity(masks.first_ring),
            "second_ring": tanner.mask_sparsity(masks.second_ring)}


def sparsity_report(pc: ParityCheck, frozen=None, h_first: int = 4, h_second: int = 4) -> dict:
    out = {"attention": attention_sparsity(pc, h_first, h_second)}
    if frozen is not None:
        out["weights"] = weight_sparsity(frozen)
        out["layers"] = frozen.zero_fractions()
    return out


def rows_to_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
