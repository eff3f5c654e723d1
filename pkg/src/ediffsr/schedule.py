"""Discrete noise schedule for the mean-reverting SDE.

The schedule is the single source of truth for every SDE coefficient:
per-step reversion speeds ``lam``, their running integral ``lam_bar``,
the diffusion rates ``phi_sq = 2 delta^2 lam`` and the one-step posterior
weights used as the training target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TERMINAL_MEAN = 0.005
DEFAULT_DELTA = 50.0 / 255.0


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    delta: float
    lam: np.ndarray  # index 0 unused (NaN), steps 1..T
    lam_bar: np.ndarray  # 0..T, lam_bar[0] == 0
    lam_prime: np.ndarray  # index 0 unused, steps 1..T
    phi_sq: np.ndarray  # index 0 unused, steps 1..T
    shape: str = "custom"
    ramp_ratio: float = 1.0

    def _check(self, t: int, lo: int = 0) -> int:
        t = int(t)
        if not lo <= t <= self.T:
            raise IndexError(f"step {t} outside [{lo}, {self.T}]")
        return t

    def mean_coeff(self, t: int) -> float:
        return math.exp(-self.lam_bar[self._check(t)])

    def variance(self, t: int) -> float:
        return self.delta**2 * -math.expm1(-2.0 * self.lam_bar[self._check(t)])

    def echo(self) -> str:
        return (f"schedule.T = {self.T}\nschedule.delta = {self.delta!r}\n"
                f"schedule.ramp_ratio = {self.ramp_ratio!r}\nschedule.shape = {self.shape}")

    def posterior_coeffs(self, t: int) -> tuple[float, float]:
        """Weights (a, b) of x*_{t-1} = a (x_t - mu) + b (x_0 - mu) + mu."""
        t = self._check(t, lo=1)
        lb_prev, lb, lp = self.lam_bar[t - 1], self.lam_bar[t], self.lam_prime[t]
        denom = -math.expm1(-2.0 * lb)
        a = -math.expm1(-2.0 * lb_prev) / denom * math.exp(-lp)
        b = -math.expm1(-2.0 * lp) / denom * math.exp(-lb_prev)
        return a, b

    def coarsen(self, steps: int) -> tuple[np.ndarray, "NoiseSchedule"]:
        """Merge unit steps into ``steps`` coarser intervals.

        Returns the retained original step indices (ascending, starting at 0)
        and a schedule over the coarse grid whose per-step rates are the
        integrals over each merged interval.
        """
        if not 1 <= steps <= self.T:
            raise ValueError(f"steps must be in [1, {self.T}], got {steps}")
        grid = np.unique(np.round(np.linspace(0, self.T, steps + 1)).astype(int))
        lam = np.diff(self.lam_bar[grid])
        return grid, _from_rates(lam, self.delta)


def _from_rates(lam: np.ndarray, delta: float, **meta) -> NoiseSchedule:
    lam = np.asarray(lam, dtype=np.float64)
    lam_bar = np.concatenate([[0.0], np.cumsum(lam)])
    pad = np.concatenate([[np.nan], lam])
    return NoiseSchedule(
        T=len(lam),
        delta=float(delta),
        lam=pad,
        lam_bar=lam_bar,
        lam_prime=np.concatenate([[np.nan], np.diff(lam_bar)]),
        phi_sq=2.0 * delta**2 * pad,
        **meta,
    )


def build_schedule(
    T: int = 100,
    delta: float = DEFAULT_DELTA,
    shape: str = "linear",
    ramp_ratio: float = 10.0,
    terminal_mean: float = TERMINAL_MEAN,
) -> NoiseSchedule:
    """Build a schedule whose integrated rate reaches ``-ln(terminal_mean)``.

    ``linear`` ramps the per-step rate from 1 to ``ramp_ratio`` (relative
    units) before rescaling; ``constant`` spreads the integral evenly.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if shape == "linear":
        if ramp_ratio < 1:
            raise ValueError("ramp_ratio must be >= 1")
        raw = np.linspace(1.0, ramp_ratio, T)
    elif shape == "constant":
        raw = np.ones(T)
    else:
        raise ValueError(f"unknown schedule shape {shape!r}")
    raw = raw * (-math.log(terminal_mean) / raw.sum())
    return _from_rates(raw, delta, shape=shape, ramp_ratio=float(ramp_ratio))
