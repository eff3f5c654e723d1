"""Super-resolution by reverse Euler-Maruyama integration from x_T around mu."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from . import sde
from .imaging import bicubic_resize, required_padding
from .schedule import NoiseSchedule

DIVISOR = 8


@dataclass
class SampleConfig:
    steps: int | None = None  # None -> schedule T
    stochastic: bool = True
    seed: int = 0


def oracle_noise_model(s: NoiseSchedule, x0):
    """Noise predictor that returns the exact (x_t - m_t) / sqrt(n_t) for known x0."""

    def predict(x_t, mu, v, t):
        t = int(torch.as_tensor(t).reshape(-1)[0])
        return (x_t - sde.marginal_mean(s, x0, mu, t)) / math.sqrt(s.variance(t))

    return predict


@torch.no_grad()
def sample_sr(model, s: NoiseSchedule, v, config: SampleConfig | None = None, scale: int | None = None,
              mu=None):
    """Super-resolve LR batch ``v`` (N, 3, h, w).

    ``model(x_t, mu, v, t)`` predicts noise. In deterministic mode the chain
    starts at mu exactly and no noise is injected, so the result does not
    depend on the seed. Fewer ``steps`` than T merge consecutive unit steps.
    """
    config = config or SampleConfig()
    scale = scale or getattr(model, "scale", None)
    if scale is None:
        raise ValueError("scale must be given for models without a .scale attribute")
    n, c, h, w = v.shape
    H, W = h * scale, w * scale
    if H % DIVISOR or W % DIVISOR:
        raise ValueError(f"HR size {(H, W)} must be divisible by {DIVISOR}; pad the HR frame by "
                         f"{required_padding(H, DIVISOR)} rows and {required_padding(W, DIVISOR)} columns")
    steps = config.steps or s.T
    grid, coarse = s.coarsen(steps) if steps != s.T else (list(range(s.T + 1)), s)
    rng = torch.Generator().manual_seed(config.seed)
    if mu is None:
        mu = bicubic_resize(v, H, W)
    if hasattr(model, "eval"):
        model.eval()
    if config.stochastic:
        x = mu + s.delta * torch.randn(mu.shape, generator=rng, dtype=mu.dtype)
    else:
        x = mu.clone()
    for i in range(len(grid) - 1, 0, -1):
        t = int(grid[i])
        eps = model(x, mu, v, torch.full((n,), t))
        score = -eps / math.sqrt(s.variance(t))
        drift = sde.reverse_drift(coarse, x, mu, score, i)
        x = x - drift
        if config.stochastic and i > 1:
            x = x + math.sqrt(float(coarse.phi_sq[i])) * torch.randn(x.shape, generator=rng, dtype=x.dtype)
    x = torch.nan_to_num(x, nan=0.0, posinf=1.0, neginf=0.0)
    return x.clamp(0.0, 1.0)
