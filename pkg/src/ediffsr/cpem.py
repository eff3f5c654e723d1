"""Conditional prior enhancement: fold the noisy HR state to LR scale, mix it
with the LR image through RCABs, and unfold back into an HR condition."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import nncore


@dataclass
class CpemConfig:
    n_rcab: int = 5
    channels: int = 64
    scale: int = 4
    ca_reduction: int = 16

    def __post_init__(self):
        if self.channels % self.ca_reduction:
            raise ValueError("channels must be divisible by ca_reduction")
        if self.scale not in (2, 4):
            raise ValueError("scale must be 2 or 4")


def conv(c_in, c_out, k=3, stride=1, groups=1, bias=True):
    return nn.Conv2d(c_in, c_out, k, stride=stride, padding=(k - 1) // 2 if stride == 1 else 0,
                     groups=groups, bias=bias)


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction):
        super().__init__()
        self.down = nn.Conv2d(channels, channels // reduction, 1)
        self.up = nn.Conv2d(channels // reduction, channels, 1)

    def forward(self, x):
        a = x.mean(dim=(2, 3), keepdim=True)
        a = torch.sigmoid(self.up(torch.relu(self.down(a))))
        return x * a


class RCAB(nn.Module):
    def __init__(self, channels, reduction=16):
        super().__init__()
        self.channels = channels
        self.conv1 = conv(channels, channels)
        self.conv2 = conv(channels, channels)
        self.ca = ChannelAttention(channels, reduction)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"RCAB expects {self.channels} channels, got {x.shape[1]}")
        return x + self.ca(self.conv2(torch.relu(self.conv1(x))))


class CPEM(nn.Module):
    """I_cpem = PixelShuffle(conv(RCAB^n(I0) + I0)), I0 = ReLU(conv([v, fold(x_t)]))."""

    def __init__(self, cfg: CpemConfig, img_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        r2 = cfg.scale**2
        self.head = conv(img_channels + img_channels * r2, cfg.channels)
        self.body = nn.Sequential(*[RCAB(cfg.channels, cfg.ca_reduction) for _ in range(cfg.n_rcab)])
        self.tail = conv(cfg.channels, img_channels * r2)

    def forward(self, v, xt_folded):
        if xt_folded.shape[2:] != v.shape[2:] or xt_folded.shape[1] != v.shape[1] * self.cfg.scale**2:
            raise ValueError(
                f"folded state {tuple(xt_folded.shape)} inconsistent with LR {tuple(v.shape)} "
                f"at scale {self.cfg.scale}")
        i0 = torch.relu(self.head(torch.cat([v, xt_folded], dim=1)))
        deep = self.body(i0) + i0
        return nncore.pixel_shuffle(self.tail(deep), self.cfg.scale)


class ConditionAssembler(nn.Module):
    """Condition I_t = CPEM(v, fold(x_t)) + conv3x3([mu, x_t])."""

    def __init__(self, cfg: CpemConfig, img_channels: int = 3, use_cpem: bool = True):
        super().__init__()
        self.scale = cfg.scale
        self.cpem = CPEM(cfg, img_channels) if use_cpem else None
        self.skip = conv(2 * img_channels, img_channels)

    def forward(self, v, x_t, mu):
        if x_t.shape != mu.shape:
            raise ValueError("x_t and mu must share a shape")
        r = self.scale
        if x_t.shape[2] != v.shape[2] * r or x_t.shape[3] != v.shape[3] * r:
            raise ValueError(
                f"HR size {tuple(x_t.shape[2:])} is not {r}x the LR size {tuple(v.shape[2:])}")
        cond = self.skip(torch.cat([mu, x_t], dim=1))
        if self.cpem is not None:
            cond = cond + self.cpem(v, nncore.pixel_unshuffle(x_t, r))
        return cond


def assemble_condition(assembler: ConditionAssembler, v, x_t, mu):
    return assembler(v, x_t, mu)
