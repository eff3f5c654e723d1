"""Full noise predictor: condition assembly followed by EANet."""
from __future__ import annotations

from dataclasses import asdict

import torch
from torch import nn

from . import nncore
from .cpem import ConditionAssembler, CpemConfig
from .eanet import EANet, EanetConfig


class EDiffSR(nn.Module):
    def __init__(self, eanet_cfg: EanetConfig | None = None, cpem_cfg: CpemConfig | None = None,
                 use_cpem: bool = True):
        super().__init__()
        self.eanet_cfg = eanet_cfg or EanetConfig()
        self.cpem_cfg = cpem_cfg or CpemConfig()
        self.condition = ConditionAssembler(self.cpem_cfg, self.eanet_cfg.in_channels, use_cpem)
        nncore.init_weights(self.condition)
        self.eanet = EANet(self.eanet_cfg)
        # depthwise convolutions are several times faster in NHWC on CPU
        self.to(memory_format=torch.channels_last)

    @property
    def scale(self) -> int:
        return self.cpem_cfg.scale

    def forward(self, x_t, mu, v, t):
        x_t, mu, v = (z.contiguous(memory_format=torch.channels_last) for z in (x_t, mu, v))
        return self.eanet(self.condition(v, x_t, mu), t).contiguous()

    def config_echo(self) -> str:
        """Stable text description of the architecture, stored in checkpoints."""
        items = {f"eanet.{k}": v for k, v in asdict(self.eanet_cfg).items()}
        items.update({f"cpem.{k}": v for k, v in asdict(self.cpem_cfg).items()})
        items["cpem.enabled"] = self.condition.cpem is not None
        return "\n".join(f"{k} = {items[k]}" for k in sorted(items))
