"""Invariant suite behind ``aecct verify``: algebra, masks, spectrum, integer path, gradients."""

from __future__ import annotations

import numpy as np
import torch

from . import tanner
from .autodiff import analytic_grad, finite_difference_grad, layer_norm, masked_softmax, relative_error
from .codes import ParityCheck, derive_generator
from .model import AAP, AECCT, FP32, ModelConfig
from .quant import integer_accumulate, quant_act


def _result(name, ok, detail):
    return {"name": name, "ok": bool(ok), "detail": detail}


def check_generator(pc: ParityCheck):
    gen = derive_generator(pc)
    residue = int(((gen.g.astype(np.int64) @ pc.h.T.astype(np.int64)) % 2).sum())
    return _result("G H^T = 0", residue == 0 and gen.g.shape == (pc.k, pc.n),
                   f"G is {gen.g.shape}, nonzero entries of G H^T: {residue}")


def check_masks(pc: ParityCheck):
    masks = tanner.build_masks(tanner.build_graph(pc))
    union = np.array_equal(masks.first_ring | masks.second_ring, masks.ecct)
    off = ~np.eye(masks.ecct.shape[0], dtype=bool)
    overlap = int((masks.first_ring & masks.second_ring & off).sum())
    return _result("HPSA mask union = ECCT mask, rings disjoint", union and overlap == 0,
                   f"union equal: {union}, off-diagonal overlap: {overlap}")


def check_spectrum(pc: ParityCheck):
    basis = tanner.spectral_basis(tanner.build_graph(pc))
    lap, vals, vecs = basis.laplacian, basis.eigenvalues, basis.eigenvectors
    residual = float(np.abs(lap @ vecs - vecs * vals).max())
    ok = residual < 1e-6 and vals.min() >= 0 and vals.max() <= 2 and abs(vals[0]) < 1e-9
    return _result("Laplacian eigensystem", ok,
                   f"residual {residual:.2e}, spectrum [{vals.min():.3g}, {vals.max():.3g}]")


def check_integer_layers(seed: int, layers: int = 200):
    rng = np.random.default_rng(seed)
    worst = 0
    for _ in range(layers):
        d_in, d_out = rng.integers(1, 65, size=2)
        t = rng.integers(-1, 2, size=(d_out, d_in)).astype(np.int8)
        q, _ = quant_act(rng.standard_normal((int(rng.integers(1, 9)), d_in)))
        oracle = q.astype(np.float64) @ t.T.astype(np.float64)
        worst = max(worst, float(np.abs(integer_accumulate(q, t) - oracle).max()))
    return _result("integer accumulation exact", worst == 0.0,
                   f"{layers} random layers, max deviation {worst}")


def _with_random_head(model, seed):
    """The output head starts at zero; randomize it so model-level checks see every layer."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.out.weight.copy_(0.1 * torch.randn(model.out.weight.shape, generator=gen))
    return model


def check_frozen_path(pc: ParityCheck, seed: int):
    model = _with_random_head(AECCT(pc, ModelConfig(quant_mode=AAP), seed=seed), seed)
    frozen = model.freeze()
    model.double().align_to_frozen_(frozen)
    y = 1.0 + 0.6 * np.random.default_rng(seed).standard_normal((64, pc.n))
    gap = float(np.abs(model.predict_logits(y) - frozen.predict_logits(y, dtype=np.float64)).max())
    return _result("train path = frozen integer path", gap < 1e-5, f"max logit gap {gap:.2e}")


def check_gradients(pc: ParityCheck, seed: int):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(3, 5, generator=gen, dtype=torch.float64)
    mask = torch.rand(3, 5, generator=gen) > 0.3
    mask[:, 0] = True
    weight = torch.randn(3, 5, generator=gen, dtype=torch.float64)
    gain = torch.randn(5, generator=gen, dtype=torch.float64)
    bias = torch.randn(5, generator=gen, dtype=torch.float64)
    errors = {}
    cases = {
        "masked_softmax": (lambda a: (masked_softmax(a, mask) * weight).sum(), [x]),
        "layer_norm": (lambda a, g, b: (layer_norm(a, g, b) * weight).sum(), [x, gain, bias]),
    }
    for name, (fn, inputs) in cases.items():
        errors[name] = max(relative_error(a, n) for a, n in
                           zip(analytic_grad(fn, inputs), finite_difference_grad(fn, inputs)))
    cfg = ModelConfig(n_blocks=1, dim=8, heads=2, h_first=1, h_second=1, d_spe=4, spe_heads=2,
                      quant_mode=FP32)
    model = _with_random_head(AECCT(pc, cfg, seed=seed), seed).double()
    feats = torch.as_tensor(np.random.default_rng(seed).standard_normal((2, model.n_nodes)))
    direction = {n: torch.randn(p.shape, generator=gen, dtype=torch.float64)
                 for n, p in model.named_parameters()}
    model.zero_grad()
    model(feats).pow(2).sum().backward()
    analytic = sum(float((p.grad * direction[n]).sum()) for n, p in model.named_parameters())
    base = {n: p.detach().clone() for n, p in model.named_parameters()}

    def shifted(eps):
        with torch.no_grad():
            for n, p in model.named_parameters():
                p.copy_(base[n] + eps * direction[n])
            return float(model(feats).pow(2).sum())

    numeric = (shifted(1e-5) - shifted(-1e-5)) / 2e-5
    shifted(0.0)
    errors["aecct directional"] = abs(analytic - numeric) / max(abs(numeric), 1e-12)
    worst = max(errors.values())
    return _result("gradients vs finite differences", worst < 1e-3,
                   ", ".join(f"{k} {v:.1e}" for k, v in errors.items()))


def run_invariants(pc: ParityCheck, seed: int = 0) -> list:
    checks = [
        lambda: check_generator(pc),
        lambda: check_masks(pc),
        lambda: check_spectrum(pc),
        lambda: check_integer_layers(seed),
        lambda: check_frozen_path(pc, seed),
        lambda: check_gradients(pc, seed),
    ]
    results = []
    for check in checks:
        try:
            results.append(check())
        except Exception as exc:  # a crashing check is a failing check
            results.append(_result(getattr(check, "__name__", "check"), False, repr(exc)))
    return results
