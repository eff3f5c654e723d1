import math

import numpy as np
import pytest
import torch

from ediffsr import sde
from ediffsr.cpem import CpemConfig
from ediffsr.data import PairDataset, synth_image
from ediffsr.eanet import EanetConfig
from ediffsr.model import EDiffSR
from ediffsr.nncore import module_grad_check
from ediffsr.training import (AdamState, CheckpointError, TrainConfig, TrainingDiverged, adamw_step,
                              compute_ml_loss, cosine_lr, load_checkpoint, restore, save_checkpoint,
                              train_loop)

TINY_NET = EanetConfig(base_channels=4, enc_counts=[1, 1, 1, 1], dec_counts=[1, 1, 1, 1], time_dim=8)
TINY_CPEM = CpemConfig(n_rcab=1, channels=16, scale=2, ca_reduction=8)


def tiny_model(seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return EDiffSR(TINY_NET, TINY_CPEM).to(dtype)


def tiny_dataset(n=6, size=16, dtype=torch.float32):
    rng = np.random.default_rng(5)
    hr = torch.from_numpy(np.stack([synth_image(rng, size, "mixed") for _ in range(n)]))
    return PairDataset(hr.to(dtype), 2)


class Fixed:
    """Stand-in model returning a precomputed tensor."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x_t, mu, v, t):
        return self.fn(x_t, mu, v, t)


def _batch(data, n=3):
    return data.hr[:n], data.lr[:n], data.mu[:n]


def test_loss_zero_at_oracle_prediction(sched, gen):
    data = tiny_dataset(dtype=torch.float64)
    x0, v, mu = _batch(data)
    t = [1, 40, 100]
    eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)

    def solve(x_t, mu, v, tt):
        # choose eps_pred so that x_t - dx_t lands exactly on the ideal state
        target = sde.ideal_reverse_state(sched, x_t, x0, mu, t)
        lam = torch.tensor([sched.lam[k] for k in t], dtype=x_t.dtype).view(-1, 1, 1, 1)
        phi2 = torch.tensor([sched.phi_sq[k] for k in t], dtype=x_t.dtype).view(-1, 1, 1, 1)
        std = torch.tensor([math.sqrt(sched.variance(k)) for k in t], dtype=x_t.dtype).view(-1, 1, 1, 1)
        return (x_t - lam * (mu - x_t) - target) * std / phi2

    loss = compute_ml_loss(sched, Fixed(solve), (x0, v, mu), t, eps=eps)
    assert loss.item() <= 1e-15


def test_loss_of_zero_model_closed_form(sched, gen):
    data = tiny_dataset(dtype=torch.float64)
    x0, v, mu = _batch(data)
    t = [2, 17, 88]
    eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    loss = compute_ml_loss(sched, Fixed(lambda x, *_: torch.zeros_like(x)), (x0, v, mu), t, eps=eps)
    expect = 0.0
    for i, k in enumerate(t):
        lb, lb1 = sched.lam_bar[k], sched.lam_bar[k - 1]
        step = lb - lb1
        xt = mu[i] + math.exp(-lb) * (x0[i] - mu[i]) + sched.delta * math.sqrt(1 - math.exp(-2 * lb)) * eps[i]
        # conjugate-Gaussian combination of the one-step transition and the x0 marginal
        w_t = (1 - math.exp(-2 * lb1)) * math.exp(-step) / (1 - math.exp(-2 * lb))
        w_0 = (1 - math.exp(-2 * step)) * math.exp(-lb1) / (1 - math.exp(-2 * lb))
        ideal = mu[i] + w_t * (xt - mu[i]) + w_0 * (x0[i] - mu[i])
        expect += (xt - sched.lam[k] * (mu[i] - xt) - ideal).abs().mean().item() / len(t)
    assert loss.item() == pytest.approx(expect, rel=1e-12)


def test_loss_rejects_step_zero(sched):
    data = tiny_dataset()
    with pytest.raises(ValueError):
        compute_ml_loss(sched, Fixed(lambda x, *_: x), _batch(data, 2), [0, 3])


def test_loss_gradient_matches_finite_differences(sched, gen):
    model = tiny_model(dtype=torch.float64)
    with torch.no_grad():  # make the zero-initialized head live so every path carries gradient
        model.eanet.head.weight.normal_(0, 0.1, generator=gen)
    data = tiny_dataset(n=2, dtype=torch.float64)
    batch = _batch(data, 2)
    eps = torch.randn(batch[0].shape, generator=gen, dtype=torch.float64)

    def loss_fn(m):
        return compute_ml_loss(sched, m, batch, [5, 60], eps=eps, loss_norm="l2")

    rep = module_grad_check(model, loss_fn, tolerance=1e-4, max_entries=3, generator=gen)
    assert rep.passed, {k: v for k, v in rep.errors.items() if v > 1e-4}


def test_target_variance_below_noise_variance(sched, gen):
    data = tiny_dataset(n=16, dtype=torch.float64)
    x0, _, mu = data.hr, data.lr, data.mu
    for t in range(1, 11):
        x_t, eps = sde.forward_marginal_sample(sched, x0, mu, t, rng=gen)
        target = sde.ideal_reverse_state(sched, x_t, x0, mu, t)
        assert target.var(dim=0).mean() < eps.var(dim=0).mean()


# --- optimizer -------------------------------------------------------------------

def _adam(params):
    return AdamState.zeros(params)


def test_adamw_first_step_example():
    p = {"w": torch.tensor([1.0], dtype=torch.float64)}
    adamw_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, _adam(p), 0.1,
               TrainConfig(weight_decay=0.0))
    assert p["w"].item() == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adamw_zero_gradient_cases():
    p = {"w": torch.tensor([2.0, -3.0], dtype=torch.float64)}
    zero = {"w": torch.zeros(2, dtype=torch.float64)}
    adamw_step(p, zero, _adam(p), 0.01, TrainConfig(weight_decay=0.0))
    assert p["w"].tolist() == [2.0, -3.0]
    adamw_step(p, zero, _adam(p), 0.01, TrainConfig(weight_decay=0.1))
    assert p["w"].tolist() == pytest.approx([2.0 * 0.999, -3.0 * 0.999], abs=1e-15)


def test_adamw_matches_reference_over_steps(gen):
    w = torch.randn(5, generator=gen, dtype=torch.float64)
    ours = {"w": w.clone()}
    ref = torch.nn.Parameter(w.clone())
    opt = torch.optim.AdamW([ref], lr=0.05, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    state = _adam(ours)
    for _ in range(10):
        g = torch.randn(5, generator=gen, dtype=torch.float64)
        adamw_step(ours, {"w": g}, state, 0.05, TrainConfig(weight_decay=0.0))
        ref.grad = g.clone()
        opt.step()
    assert torch.allclose(ours["w"], ref.detach(), atol=1e-12)


def test_adamw_rejects_nan():
    p = {"w": torch.zeros(2)}
    with pytest.raises(TrainingDiverged, match="w"):
        adamw_step(p, {"w": torch.tensor([0.0, float("nan")])}, _adam(p), 0.1, TrainConfig())


def test_cosine_examples():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == 1e-3
    assert cosine_lr(100, 100, 1e-3, 1e-6) == pytest.approx(1e-6, abs=1e-18)
    assert cosine_lr(50, 100, 1e-3, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2, rel=1e-12)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_min=1.0, lr_init=0.1)
    with pytest.raises(ValueError):
        TrainConfig(loss_norm="huber")


# --- loop and checkpoints -----------------------------------------------------------

def test_zero_iterations(sched):
    ckpt, trace = train_loop(TrainConfig(iterations=0), tiny_dataset(), tiny_model(), sched)
    assert trace == [] and ckpt.iteration == 0


def test_same_seed_gives_identical_trace(sched):
    cfg = TrainConfig(iterations=6, lr_init=1e-3)
    data = tiny_dataset()
    _, a = train_loop(cfg, data, tiny_model(), sched)
    _, b = train_loop(cfg, data, tiny_model(), sched)
    assert a == b
    _, c = train_loop(TrainConfig(iterations=6, lr_init=1e-3, seed=1), data, tiny_model(), sched)
    assert a != c


def test_trace_file_written(sched, tmp_path):
    train_loop(TrainConfig(iterations=3), tiny_dataset(), tiny_model(), sched, out_dir=tmp_path)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,lr" and len(lines) == 4
    assert load_checkpoint(tmp_path / "last.ckpt").iteration == 3


def test_checkpoint_round_trip(sched, tmp_path):
    ckpt, _ = train_loop(TrainConfig(iterations=3, lr_init=1e-3), tiny_dataset(), tiny_model(), sched)
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.config_echo == ckpt.config_echo and back.iteration == 3 and back.rng_state == ckpt.rng_state
    for store in ("params", "opt_m", "opt_v"):
        ours, theirs = getattr(ckpt, store), getattr(back, store)
        assert list(ours) == list(theirs)
        assert all(torch.equal(ours[k], theirs[k]) for k in ours)


def test_checkpoint_truncation_and_corruption(sched, tmp_path):
    ckpt, _ = train_loop(TrainConfig(iterations=1), tiny_dataset(), tiny_model(), sched)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ckpt)
    raw = path.read_bytes()
    path.write_bytes(raw[:-1])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_checkpoint_config_mismatch_names_field(sched, tmp_path):
    ckpt, _ = train_loop(TrainConfig(iterations=0), tiny_dataset(), tiny_model(), sched)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ckpt)
    other = EDiffSR(EanetConfig(base_channels=8, enc_counts=[1, 1, 1, 1], time_dim=8), TINY_CPEM)
    with pytest.raises(CheckpointError, match="eanet.base_channels"):
        load_checkpoint(path, expected_echo=other.config_echo())
    with pytest.raises(CheckpointError, match="eanet.base_channels"):
        restore(other, ckpt)


def test_resume_matches_unbroken_run(sched, tmp_path):
    cfg = TrainConfig(iterations=20, lr_init=1e-3)
    data = tiny_dataset()
    straight, trace_full = train_loop(cfg, data, tiny_model(), sched)
    half, trace_a = train_loop(cfg, data, tiny_model(), sched, stop_at=10)
    save_checkpoint(tmp_path / "half.ckpt", half)
    resumed, trace_b = train_loop(cfg, data, tiny_model(seed=9), sched,
                                  resume=load_checkpoint(tmp_path / "half.ckpt"))
    assert trace_a + trace_b == trace_full
    assert all(torch.equal(straight.params[k], resumed.params[k]) for k in straight.params)
    assert all(torch.equal(straight.opt_v[k], resumed.opt_v[k]) for k in straight.params)
