"""Differentiable primitives used by the prior-enhancement branch and the denoiser.

Tensors are plain ``torch.Tensor`` in NCHW layout and reverse-mode gradients
come from torch autograd. ``grad_check`` is a separate central-difference
checker that never consults autograd for its reference values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None, groups: int = 1):
    """Cross-correlation; ``padding=None`` means same-size padding (k - 1) // 2."""
    if x.dim() != 4 or weight.dim() != 4:
        raise ValueError("conv2d expects NCHW input and (Cout, Cin/groups, k, k) weight")
    c_in = x.shape[1]
    if c_in % groups or weight.shape[0] % groups:
        raise ValueError(f"channels {c_in}/{weight.shape[0]} not divisible by groups={groups}")
    if weight.shape[1] != c_in // groups:
        raise ValueError(f"weight expects {weight.shape[1] * groups} input channels, got {c_in}")
    if padding is None:
        padding = (weight.shape[-1] - 1) // 2
    return F.conv2d(x, weight, bias, stride=stride, padding=padding, groups=groups)


def layer_norm_channel(x, alpha, beta, eps: float = 1e-6):
    """Normalize over channels at every (n, h, w) position, then affine."""
    if alpha.numel() != x.shape[1] or beta.numel() != x.shape[1]:
        raise ValueError("alpha/beta must have one entry per channel")
    mean = x.mean(dim=1, keepdim=True)
    var = (x - mean).pow(2).mean(dim=1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    return alpha.view(1, -1, 1, 1) * y + beta.view(1, -1, 1, 1)


def pixel_shuffle(x, r: int):
    if x.shape[1] % (r * r):
        raise ValueError(f"channels {x.shape[1]} not divisible by r^2={r * r}")
    return F.pixel_shuffle(x, r)


def pixel_unshuffle(x, r: int):
    if x.shape[2] % r or x.shape[3] % r:
        raise ValueError(f"spatial size {tuple(x.shape[2:])} not divisible by {r}")
    return F.pixel_unshuffle(x, r)


def simple_gate(x):
    if x.shape[1] % 2:
        raise ValueError(f"simple_gate needs an even channel count, got {x.shape[1]}")
    x1, x2 = x.chunk(2, dim=1)
    return x1 * x2


def simple_channel_attention(x, weight, bias=None):
    """Global average pool -> one 1x1 conv -> channel-wise rescale (no sigmoid)."""
    c = x.shape[1]
    if weight.shape != (c, c, 1, 1):
        raise ValueError(f"expected weight ({c}, {c}, 1, 1), got {tuple(weight.shape)}")
    a = F.conv2d(x.mean(dim=(2, 3), keepdim=True), weight, bias)
    return x * a


def time_embedding(t, dim: int, dtype=torch.float32):
    """Sinusoidal embedding; interleaved (sin, cos) pairs. ``t`` scalar or 1-D."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
    i = torch.arange(dim // 2, dtype=torch.float64)
    angle = t / torch.pow(10000.0, 2.0 * i / dim)
    emb = torch.stack([torch.sin(angle), torch.cos(angle)], dim=-1).reshape(t.shape[0], dim)
    return emb.to(dtype)


def backward(loss, params=None):
    """Accumulate d(loss)/d(param) into ``.grad``; unreached params get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()
    for p in params or ():
        if p.grad is None:
            p.grad = torch.zeros_like(p)


def init_weights(module: nn.Module):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases.

    fan_in counts k*k*Cin/groups for convolutions. A variance-preserving
    (He) scale compounds through the multiplicative gates of the denoiser
    blocks and leaves the untrained network with exploding activations.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _rel_error(analytic, numeric) -> float:
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-8)
    return (analytic - numeric).abs().max().item() / scale


def grad_check(fn, inputs, tolerance: float = 1e-5, h: float = 1e-4, analytic=None, names=None):
    """Compare autograd (or supplied ``analytic``) gradients with central differences.

    ``fn`` maps the ``inputs`` (float64 leaf tensors) to a scalar. The error
    per input is max|g_a - g_n| / max(|g_a|, |g_n|).
    """
    inputs = list(inputs)
    names = names or [f"input{i}" for i in range(len(inputs))]
    if analytic is None:
        leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
        out = fn(*leaves)
        analytic = torch.autograd.grad(out, leaves, allow_unused=True)
        analytic = [torch.zeros_like(x) if g is None else g for g, x in zip(analytic, inputs)]
    report = GradReport(tolerance=tolerance)
    with torch.no_grad():
        for k, (x, g_a) in enumerate(zip(inputs, analytic)):
            base = [t.detach().clone() for t in inputs]
            numeric = torch.zeros_like(x)
            flat = base[k].view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                plus = fn(*base).item()
                flat[i] = orig - h
                minus = fn(*base).item()
                flat[i] = orig
                numeric.view(-1)[i] = (plus - minus) / (2 * h)
            report.errors[names[k]] = _rel_error(g_a.detach(), numeric)
    return report


def module_grad_check(module: nn.Module, loss_fn, tolerance: float = 1e-5, h: float = 1e-4,
                      max_entries: int | None = None, generator=None):
    """Finite-difference check of every parameter of ``module``.

    ``loss_fn(module)`` returns a scalar. With ``max_entries`` only a random
    subset of entries per parameter is perturbed.
    """
    module.zero_grad(set_to_none=True)
    loss = loss_fn(module)
    params = dict(module.named_parameters())
    backward(loss, params.values())
    report = GradReport(tolerance=tolerance)
    with torch.no_grad():
        for name, p in params.items():
            idx = torch.arange(p.numel())
            if max_entries is not None and p.numel() > max_entries:
                idx = torch.randperm(p.numel(), generator=generator)[:max_entries]
            numeric = torch.empty(len(idx), dtype=p.dtype)
            for j, i in enumerate(idx.tolist()):
                # index by coordinates: parameters may be stored channels-last
                at = tuple(int(c) for c in torch.unravel_index(torch.tensor(i), p.shape))
                orig = p[at].item()
                p[at] = orig + h
                plus = loss_fn(module).item()
                p[at] = orig - h
                minus = loss_fn(module).item()
                p[at] = orig
                numeric[j] = (plus - minus) / (2 * h)
            report.errors[name] = _rel_error(p.grad.reshape(-1)[idx], numeric)
    return report
