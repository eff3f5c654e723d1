"""Oracle suites runnable from the CLI: each check returns (name, passed, detail)."""
from __future__ import annotations

import math

import torch

from . import nncore, sde
from .eanet import EAB
from .metrics import psnr
from .schedule import build_schedule


def check_forward_marginal(quick=False, seed=0):
    s = build_schedule()
    n_paths = 1000 if quick else 10_000
    g = torch.Generator().manual_seed(seed)
    x0 = torch.rand(1, 1, 8, 8, generator=g, dtype=torch.float64)
    mu = torch.rand(1, 1, 8, 8, generator=g, dtype=torch.float64)
    xT = sde.forward_path_simulate(s, x0.expand(n_paths, -1, -1, -1), mu.expand(n_paths, -1, -1, -1),
                                   substeps_per_step=20, rng=g)
    m_T, n_T = sde.marginal_mean(s, x0, mu, s.T)[0], s.variance(s.T)
    se = math.sqrt(n_T / n_paths)
    z = ((xT.mean(0) - m_T).abs() / se).max().item()
    var_ratio = (xT.var(0).mean() / n_T).item()
    ok = z <= 4.0 and abs(var_ratio - 1) <= 0.05
    return "forward marginal (EM paths vs closed form)", ok, f"max |z|={z:.2f}, var ratio={var_ratio:.4f}"


def check_posterior_identity(quick=False, seed=0):
    s = build_schedule()
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(100 if quick else 1000):
        t = int(torch.randint(1, s.T + 1, (1,), generator=g))
        x0, xt, mu = (torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64) for _ in range(3))
        a = sde.ideal_reverse_state(s, xt, x0, mu, t)
        b = sde.posterior_mean_oracle(s, xt, x0, mu, t)
        worst = max(worst, ((a - b).abs() / b.abs().clamp_min(1e-300)).max().item())
    return "posterior identity (closed form vs conjugate Gaussian)", worst <= 1e-10, f"max rel err={worst:.2e}"


def check_gradients(quick=False, seed=0):
    g = torch.Generator().manual_seed(seed)
    rnd = lambda *shape: torch.randn(*shape, generator=g, dtype=torch.float64)  # noqa: E731
    w_probe = rnd(1, 4, 5, 5)
    cases = {
        "conv2d": (lambda x, w, b: (nncore.conv2d(x, w, b) * w_probe).sum(),
                   [rnd(1, 3, 5, 5), rnd(4, 3, 3, 3), rnd(4)]),
        "layer_norm_channel": (lambda x, a, b: (nncore.layer_norm_channel(x, a, b) ** 3).sum(),
                               [rnd(1, 4, 3, 3), rnd(4), rnd(4)]),
        "simple_gate": (lambda x: (nncore.simple_gate(x) ** 2).sum(), [rnd(1, 4, 3, 3)]),
        "simple_channel_attention": (lambda x, w: (nncore.simple_channel_attention(x, w) ** 2).sum(),
                                     [rnd(1, 3, 4, 4), rnd(3, 3, 1, 1)]),
        "pixel_shuffle": (lambda x: (nncore.pixel_shuffle(x, 2) * torch.arange(36.0).view(1, 1, 6, 6)).sum(),
                          [rnd(1, 4, 3, 3)]),
    }
    worst, failed = 0.0, []
    for name, (fn, inputs) in cases.items():
        rep = nncore.grad_check(fn, inputs, tolerance=1e-5)
        worst = max(worst, rep.max_error)
        if not rep.passed:
            failed.append(name)
    blk = EAB(4, 8).double()
    with torch.no_grad():
        for p in blk.parameters():
            p.copy_(0.3 * torch.randn(p.shape, generator=g, dtype=torch.float64))
    x, temb = rnd(1, 4, 6, 6), rnd(1, 8)
    probe = rnd(1, 4, 6, 6)
    rep = nncore.module_grad_check(blk, lambda m: (m(x, temb) * probe).sum(), tolerance=1e-5,
                                   max_entries=4 if quick else None, generator=g)
    worst = max(worst, rep.max_error)
    if not rep.passed:
        failed.append("EAB")
    detail = f"max rel err={worst:.2e}" + (f"; failed: {', '.join(failed)}" if failed else "")
    return "gradient checks (primitives + EAB)", not failed, detail


def check_oracle_sampling(quick=False, seed=0):
    s = build_schedule()
    g = torch.Generator().manual_seed(seed)
    n = 2 if quick else 10
    x0 = torch.rand(n, 3, 32, 32, generator=g, dtype=torch.float64)
    mu = torch.rand(n, 3, 32, 32, generator=g, dtype=torch.float64)
    xT, _ = sde.forward_marginal_sample(s, x0, mu, s.T, rng=g)
    rec = sde.oracle_reverse_chain(s, xT, x0, mu)
    worst = min(psnr(a, b) for a, b in zip(rec, x0))
    return "oracle-score reverse chain", worst >= 25.0, f"min PSNR={worst:.2f} dB"


CHECKS = (check_forward_marginal, check_posterior_identity, check_gradients, check_oracle_sampling)


def run_selfcheck(quick=False, out=print) -> bool:
    rows = [check(quick=quick) for check in CHECKS]
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        out(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    return all(ok for _, ok, _ in rows)
