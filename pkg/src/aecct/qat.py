"""Quantization-aware AAP linear layer (torch)."""

from __future__ import annotations

import torch
import torch.nn as nn

from .autodiff import straight_through
from .quant import DELTA_MIN, EPS_Q, QB, TernaryPackedLayer


def round_half_away(x):
    return torch.sign(x) * torch.floor(x.abs() + 0.5)


def abs_percentile(w, p: float = 0.5):
    """p-quantile of |w| (linear interpolation), detached from the graph."""
    return torch.quantile(w.detach().abs().reshape(-1), p)


def ternarize(w, gamma, delta, eps_q: float = EPS_Q):
    return torch.clamp(round_half_away(w / (gamma * delta + eps_q)), -1, 1)


def act_scale(x, per_sample: bool = True):
    """Absmax scale; one scalar per sample matrix (last two axes) or per tensor."""
    if per_sample and x.dim() > 2:
        alpha = x.detach().abs().amax(dim=(-2, -1), keepdim=True)
    else:
        alpha = x.detach().abs().amax()
    return torch.where(alpha == 0, torch.ones_like(alpha), alpha)


def quant_act(x, per_sample: bool = True):
    """Returns (q, alpha) with q = RoundClip(x * Qb / alpha, -Qb, Qb) as floats."""
    alpha = act_scale(x, per_sample)
    q = torch.clamp(round_half_away(x * (QB / alpha)), -QB, QB)
    return q, alpha


def aap_linear_train(x, weight, delta, bias, p: float = 0.5, eps_q: float = EPS_Q,
                     per_sample: bool = True):
    """Forward: (Quant(x) Ternary(W)^T) * gamma*delta*alpha/Qb + b.

    Gradients: x passes straight through the activation quantizer inside the
    clip range; W sees Ternary(W)*gamma*delta as identity; delta receives the
    exact derivative of the explicit scale with the ternary pattern fixed;
    gamma is a per-step constant.
    """
    q, alpha = quant_act(x, per_sample)
    x_hat = q * (alpha / QB)
    inside = (x * (QB / alpha)).abs() <= QB
    x_ste = straight_through(x_hat, torch.where(inside, x, x.detach()))

    gamma = abs_percentile(weight, p)
    t = ternarize(weight.detach(), gamma, delta.detach(), eps_q)
    w_ste = weight - weight.detach() + t * gamma * delta
    return x_ste @ w_ste.transpose(-2, -1) + bias


class AAPLinear(nn.Module):
    """Linear layer with adaptive absolute-percentile ternary weights and INT8 inputs."""

    def __init__(self, in_features: int, out_features: int, p: float = 0.5,
                 eps_q: float = EPS_Q, per_sample: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.p = p
        self.eps_q = eps_q
        self.per_sample = per_sample
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.delta = nn.Parameter(torch.ones(()))
        nn.init.xavier_uniform_(self.weight)

    @classmethod
    def from_linear(cls, linear: nn.Linear, **kwargs) -> "AAPLinear":
        layer = cls(linear.in_features, linear.out_features, **kwargs)
        layer = layer.to(linear.weight.dtype)
        with torch.no_grad():
            layer.weight.copy_(linear.weight)
            layer.bias.copy_(linear.bias)
        return layer

    def forward(self, x):
        return aap_linear_train(x, self.weight, self.delta, self.bias, self.p, self.eps_q,
                                self.per_sample)

    def clamp_delta_(self):
        with torch.no_grad():
            self.delta.clamp_(min=DELTA_MIN)

    def gamma(self) -> float:
        return float(abs_percentile(self.weight, self.p))

    def ternary(self):
        return ternarize(self.weight.detach(), abs_percentile(self.weight, self.p),
                         self.delta.detach(), self.eps_q).to(torch.int8)

    def freeze(self) -> TernaryPackedLayer:
        gamma = abs_percentile(self.weight, self.p)
        t = self.ternary().cpu().numpy()
        scale = float(gamma * self.delta.detach())
        return TernaryPackedLayer.from_ternary(t, scale, self.bias.detach().cpu().numpy())

    def extra_repr(self) -> str:
        return f"in_features={self.in_features}, out_features={self.out_features}, p={self.p}"
