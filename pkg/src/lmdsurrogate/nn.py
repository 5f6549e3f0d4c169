"""Boundary-aware network building blocks.

All functions take and return ``torch.Tensor`` in NCHW layout and are
differentiable through torch autograd. Padding follows the dealloying
geometry: columns wrap (periodic sides), the top is zero (pure C bath, no
A/B and no solid), the bottom replicates the last row (bulk alloy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .fields import ConditioningInput, ParameterError


class ConfigurationError(ValueError):
    """Architecture settings that cannot be realised."""


class UsageError(RuntimeError):
    """API used out of order, e.g. gradients without a recorded forward pass."""


def physics_pad(x: torch.Tensor, p: int) -> torch.Tensor:
    """Pad ``p`` cells on every side: zero top, replicated bottom, then circular columns.

    Vertical padding is applied first so the corner blocks are wrapped copies
    of the padded rows.
    """
    if p < 0:
        raise ParameterError("padding must be nonnegative")
    if p == 0:
        return x
    H, W = x.shape[-2:]
    if p > min(H, W):
        raise ParameterError(f"padding {p} exceeds min(H, W) = {min(H, W)}")
    top = x.new_zeros(*x.shape[:-2], p, W)
    bottom = x[..., -1:, :].expand(*x.shape[:-2], p, W)
    x = torch.cat([top, x, bottom], dim=-2)
    return torch.cat([x[..., -p:], x, x[..., :p]], dim=-1)


def conv2d(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Same-size cross-correlation with physics padding (odd square kernels)."""
    k = kernel.shape[-1]
    if kernel.ndim != 4 or kernel.shape[-2] != k or k % 2 == 0:
        raise ParameterError(f"kernel must be Cout x Cin x k x k with odd k, got {tuple(kernel.shape)}")
    if kernel.shape[1] != x.shape[1]:
        raise ParameterError(f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[1]}")
    return F.conv2d(physics_pad(x, k // 2), kernel, bias)


@dataclass
class AttentionWeights:
    Wq: torch.Tensor  # (C/8) x C x 1 x 1
    Wk: torch.Tensor  # (C/8) x C x 1 x 1
    Wv: torch.Tensor  # C x C x 1 x 1
    Wo: torch.Tensor  # C x C x 1 x 1


def attention_matrix(x: torch.Tensor, Wq: torch.Tensor, Wk: torch.Tensor) -> torch.Tensor:
    """Row-stochastic B x N x N matrix over flattened positions."""
    B, C, H, W = x.shape
    if C % 8:
        raise ConfigurationError(f"attention needs channels divisible by 8, got {C}")
    d = Wq.shape[0]
    q = F.conv2d(x, Wq).reshape(B, d, H * W)
    k = F.conv2d(x, Wk).reshape(B, d, H * W)
    scores = torch.bmm(q.transpose(1, 2), k) / math.sqrt(d)
    return torch.softmax(scores, dim=-1)  # torch subtracts the row max internally


def conv_self_attention(x: torch.Tensor, w: AttentionWeights) -> torch.Tensor:
    """Non-local block built only from 1x1 convolutions; valid for any H, W."""
    B, C, H, W = x.shape
    if C % 8:
        raise ConfigurationError(f"attention needs channels divisible by 8, got {C}")
    A = attention_matrix(x, w.Wq, w.Wk)
    v = F.conv2d(x, w.Wv).reshape(B, C, H * W)
    y = torch.bmm(v, A.transpose(1, 2)).reshape(B, C, H, W)
    return x + F.conv2d(y, w.Wo)


class ConvSelfAttention(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        if channels % 8:
            raise ConfigurationError(f"attention needs channels divisible by 8, got {channels}")
        d = channels // 8
        self.q = nn.Parameter(torch.empty(d, channels, 1, 1))
        self.k = nn.Parameter(torch.empty(d, channels, 1, 1))
        self.v = nn.Parameter(torch.empty(channels, channels, 1, 1))
        # zero output projection: the block starts as the identity
        self.o = nn.Parameter(torch.zeros(channels, channels, 1, 1))
        for p in (self.q, self.k, self.v):
            nn.init.kaiming_uniform_(p, a=math.sqrt(5))

    def weights(self) -> AttentionWeights:
        return AttentionWeights(self.q, self.k, self.v, self.o)

    def forward(self, x):
        return conv_self_attention(x, self.weights())


class PhysicsConv2d(nn.Module):
    """3x3 (or k x k) convolution with physics padding; Kaiming fan-in init."""

    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.zeros(cout))
        nn.init.kaiming_normal_(self.weight, mode="fan_in", nonlinearity="relu")

    def forward(self, x):
        return conv2d(x, self.weight, self.bias)


@dataclass(frozen=True)
class ThetaScaling:
    """Affine map of (dtau, cA_ref) onto [0, 1]^2."""

    dtau_min: float = 1.0
    dtau_max: float = 4.0
    cA_min: float = 0.2
    cA_max: float = 0.4

    def __post_init__(self):
        if not self.dtau_max > self.dtau_min or not self.cA_max > self.cA_min:
            raise ParameterError("theta ranges must have max > min")

    def normalize(self, dtau, cA_ref):
        return ((dtau - self.dtau_min) / (self.dtau_max - self.dtau_min),
                (cA_ref - self.cA_min) / (self.cA_max - self.cA_min))


class ConditioningHead(nn.Module):
    """Two SiLU hidden layers followed by one linear output layer per U-Net level."""

    def __init__(self, sizes: Sequence[int], hidden: int = 128, n_inputs: int = 2):
        super().__init__()
        self.sizes = tuple(int(s) for s in sizes)
        self.hidden1 = nn.Linear(n_inputs, hidden)
        self.hidden2 = nn.Linear(hidden, hidden)
        self.out = nn.ModuleList(nn.Linear(hidden, s) for s in self.sizes)
        for layer in self.out:
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, theta: torch.Tensor) -> list[torch.Tensor]:
        """``theta`` is B x 2, already normalised."""
        h = F.silu(self.hidden2(F.silu(self.hidden1(theta))))
        return [layer(h) for layer in self.out]


def conditioning_vectors(theta: ConditioningInput, head: ConditioningHead,
                         scaling: ThetaScaling | None = None) -> list[torch.Tensor]:
    scaling = scaling or ThetaScaling()
    p = next(head.parameters())
    t = torch.tensor([scaling.normalize(theta.dtau, theta.cA_ref)], dtype=p.dtype, device=p.device)
    return [v[0] for v in head(t)]


def film_scale(features: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """``features * (1 + s)`` per channel; ``s`` is length C or B x C."""
    C = features.shape[1]
    if s.shape[-1] != C:
        raise ParameterError(f"scaling vector has length {s.shape[-1]}, features have {C} channels")
    if s.ndim == 1:
        s = s.unsqueeze(0)
    return features * (1.0 + s)[:, :, None, None]


def gradients(output: torch.Tensor, inputs: Sequence[torch.Tensor],
              grad_output: torch.Tensor | None = None) -> tuple[torch.Tensor, ...]:
    """Reverse-mode gradients of ``output`` w.r.t. ``inputs``.

    Unused inputs get zero gradients. Raises UsageError when no forward graph
    was recorded for ``output``.
    """
    if output.grad_fn is None and not output.requires_grad:
        raise UsageError("no recorded forward pass: output does not depend on any tensor requiring grad")
    if grad_output is None:
        if output.numel() != 1:
            raise UsageError("grad_output is required for non-scalar outputs")
        grad_output = torch.ones_like(output)
    grads = torch.autograd.grad(output, list(inputs), grad_output, allow_unused=True)
    return tuple(torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads))


def relative_l2_loss(pred: torch.Tensor, target: torch.Tensor, floor: float = 1e-12) -> torch.Tensor:
    """Per-sample relative L2 over all non-batch axes, averaged over the batch."""
    diff = (pred - target).flatten(1).norm(dim=1)
    ref = target.flatten(1).norm(dim=1).clamp_min(floor)
    return (diff / ref).mean()
