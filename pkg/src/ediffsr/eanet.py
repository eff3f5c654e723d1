"""Noise-prediction U-Net built from efficient activation blocks (EAB)."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from . import nncore
from .cpem import conv


@dataclass
class EanetConfig:
    base_channels: int = 64
    enc_counts: list = field(default_factory=lambda: [14, 1, 1, 1])
    dec_counts: list = field(default_factory=lambda: [1, 1, 1, 1])
    mid_count: int = 1
    in_channels: int = 3
    out_channels: int = 3
    time_dim: int = 256

    def __post_init__(self):
        self.enc_counts = list(self.enc_counts)
        self.dec_counts = list(self.dec_counts)
        if len(self.enc_counts) != 4 or len(self.dec_counts) != 4:
            raise ValueError("EANet depth is fixed at 4")
        if min(self.enc_counts + self.dec_counts + [self.mid_count]) < 1:
            raise ValueError("all block counts must be >= 1")
        if self.base_channels % 2:
            raise ValueError("base_channels must be even")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


class LayerNorm2d(nn.Module):
    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return nncore.layer_norm_channel(x, self.weight, self.bias, self.eps)


class SCA(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return nncore.simple_channel_attention(x, self.proj.weight, self.proj.bias)


class EAB(nn.Module):
    """Time-modulated block: multi-scale depthwise gating branches, then a gated MLP.

    Modulation scales are parameterized as ``1 + mlp(t)`` so a zero MLP output
    is the identity modulation.
    """

    kernel_sizes = (3, 5, 7)

    def __init__(self, channels, time_dim):
        super().__init__()
        c = channels
        self.channels, self.time_dim = c, time_dim
        self.mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, 4 * c))
        self.norm1 = LayerNorm2d(c)
        self.lift = nn.Conv2d(c, 2 * c, 1)
        self.dw = nn.ModuleList(conv(2 * c, 2 * c, k, groups=2 * c) for k in self.kernel_sizes)
        self.sca = nn.ModuleList(SCA(c) for _ in self.kernel_sizes)
        self.fuse = nn.Conv2d(len(self.kernel_sizes) * c, c, 1)
        self.norm2 = LayerNorm2d(c)
        self.ffn_in = nn.Conv2d(c, 2 * c, 1)
        self.ffn_out = nn.Conv2d(c, c, 1)

    def modulation(self, t_emb):
        if t_emb.shape[-1] != self.time_dim:
            raise ValueError(f"time embedding has {t_emb.shape[-1]} entries, expected {self.time_dim}")
        a1, b1, a2, b2 = self.mlp(t_emb).chunk(4, dim=1)
        view = lambda z: z[:, :, None, None]  # noqa: E731
        return 1 + view(a1), view(b1), 1 + view(a2), view(b2)

    def forward(self, x, t_emb, mod=None):
        if x.shape[1] != self.channels:
            raise ValueError(f"EAB expects {self.channels} channels, got {x.shape[1]}")
        a1, b1, a2, b2 = self.modulation(t_emb) if mod is None else mod
        f = self.lift(a1 * self.norm1(x) + b1)
        branches = [sca(nncore.simple_gate(dw(f))) for dw, sca in zip(self.dw, self.sca)]
        f_agg = self.fuse(torch.cat(branches, dim=1))
        y = x + f_agg
        f_bar = a2 * self.norm2(f_agg) + b2
        return y + self.ffn_out(nncore.simple_gate(self.ffn_in(f_bar)))


class EANet(nn.Module):
    def __init__(self, cfg: EanetConfig):
        super().__init__()
        self.cfg = cfg
        c, td = cfg.base_channels, cfg.time_dim
        self.stem = conv(cfg.in_channels, c)
        self.encoders = nn.ModuleList()
        self.downs = nn.ModuleList()
        width = c
        for i, m in enumerate(cfg.enc_counts):
            self.encoders.append(nn.ModuleList(EAB(width, td) for _ in range(m)))
            if i < 3:
                self.downs.append(nn.Conv2d(width, 2 * width, 2, stride=2))
                width *= 2
        self.middle = nn.ModuleList(EAB(width, td) for _ in range(cfg.mid_count))
        # decoders run deepest first; ups[i] feeds decoder stage i+1
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for i, n in enumerate(reversed(cfg.dec_counts)):
            if i > 0:
                self.ups.append(nn.Conv2d(width, 2 * width, 1, bias=False))
                width //= 2
            self.decoders.append(nn.ModuleList(EAB(width, td) for _ in range(n)))
        self.head = conv(c, cfg.out_channels)
        nncore.init_weights(self)
        for m in self.modules():
            if isinstance(m, EAB):
                nncore.zero_module(m.ffn_out)
        nncore.zero_module(self.head)

    def forward(self, cond, t):
        n, _, h, w = cond.shape
        if h % 8 or w % 8:
            raise ValueError(f"spatial size {(h, w)} must be divisible by 8")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(n)
        t_emb = nncore.time_embedding(t, self.cfg.time_dim, dtype=cond.dtype)
        x = self.stem(cond)
        skips = []
        for i, blocks in enumerate(self.encoders):
            for blk in blocks:
                x = blk(x, t_emb)
            skips.append(x)
            if i < 3:
                x = self.downs[i](x)
        for blk in self.middle:
            x = blk(x, t_emb)
        for i, blocks in enumerate(self.decoders):
            if i > 0:
                x = nncore.pixel_shuffle(self.ups[i - 1](x), 2)
            x = x + skips[3 - i]
            for blk in blocks:
                x = blk(x, t_emb)
        return self.head(x)


def count_parameters(module: nn.Module | None, grouped: bool = False):
    if module is None:
        return {} if grouped else 0
    if not grouped:
        return sum(p.numel() for p in module.parameters())
    groups = {}
    for name, p in module.named_parameters():
        key = name.split(".")[0]
        groups[key] = groups.get(key, 0) + p.numel()
    return groups
