import pytest
import torch

from ediffsr.cpem import CpemConfig
from ediffsr.eanet import EanetConfig
from ediffsr.imaging import bicubic_resize
from ediffsr.metrics import psnr
from ediffsr.model import EDiffSR
from ediffsr.sampling import SampleConfig, oracle_noise_model, sample_sr
from ediffsr.schedule import build_schedule


def _images(gen, n=2, size=32, dtype=torch.float64):
    # smooth random images: bilinear blow-up of a coarse grid keeps values in [0, 1]
    coarse = torch.rand(n, 3, 4, 4, generator=gen, dtype=dtype)
    return torch.nn.functional.interpolate(coarse, size=(size, size), mode="bilinear", align_corners=False)


def test_oracle_sampler_recovers_hr(sched, gen):
    hr = _images(gen)
    v = bicubic_resize(hr, 8, 8)
    sr = sample_sr(oracle_noise_model(sched, hr), sched, v, SampleConfig(stochastic=False), scale=4)
    assert sr.shape == hr.shape
    assert psnr(sr, hr) >= 25.0


def test_stochastic_oracle_sampler(sched, gen):
    hr = _images(gen)
    v = bicubic_resize(hr, 8, 8)
    sr = sample_sr(oracle_noise_model(sched, hr), sched, v, SampleConfig(stochastic=True, seed=3), scale=4)
    assert psnr(sr, hr) >= 25.0


def test_fewer_steps_still_reconstruct(sched, gen):
    hr = _images(gen)
    v = bicubic_resize(hr, 8, 8)
    sr = sample_sr(oracle_noise_model(sched, hr), sched, v, SampleConfig(steps=25, stochastic=False), scale=4)
    assert psnr(sr, hr) >= 25.0


def test_more_steps_do_not_hurt(gen):
    hr = _images(gen)
    v = bicubic_resize(hr, 8, 8)
    scores = []
    for steps in (10, 40, 100):
        s = build_schedule(T=steps)
        sr = sample_sr(oracle_noise_model(s, hr), s, v, SampleConfig(stochastic=False), scale=4)
        scores.append(psnr(sr, hr))
    assert scores == sorted(scores)


def _toy_model():
    torch.manual_seed(0)
    return EDiffSR(EanetConfig(base_channels=4, enc_counts=[1, 1, 1, 1], time_dim=8),
                   CpemConfig(n_rcab=1, channels=16, scale=2, ca_reduction=8))


def test_network_sampler_shape_and_range(sched, gen):
    model = _toy_model()
    with torch.no_grad():
        model.eanet.head.weight.normal_(0, 1.0, generator=gen)
    v = torch.rand(2, 3, 8, 8, generator=gen)
    sr = sample_sr(model, sched, v, SampleConfig(steps=10))
    assert sr.shape == (2, 3, 16, 16)
    assert torch.isfinite(sr).all() and sr.min() >= 0 and sr.max() <= 1


def test_zero_network_deterministic_mode_returns_mu(sched, gen):
    # eps = 0 everywhere and x_T = mu: the drift toward mu vanishes on every step
    v = torch.rand(1, 3, 8, 8, generator=gen)
    sr = sample_sr(_toy_model(), sched, v, SampleConfig(stochastic=False))
    assert torch.allclose(sr, bicubic_resize(v, 16, 16).clamp(0, 1), atol=1e-6)


def test_sampling_is_seed_deterministic(sched, gen):
    model = _toy_model()
    v = torch.rand(1, 3, 8, 8, generator=gen)
    cfg = SampleConfig(steps=10, seed=4)
    assert torch.equal(sample_sr(model, sched, v, cfg), sample_sr(model, sched, v, cfg))
    assert not torch.equal(sample_sr(model, sched, v, cfg), sample_sr(model, sched, v, SampleConfig(steps=10, seed=5)))


def test_rejects_indivisible_size(sched):
    with pytest.raises(ValueError, match="divisible by 8"):
        sample_sr(_toy_model(), sched, torch.rand(1, 3, 5, 5))


def test_requires_scale_for_bare_callables(sched):
    with pytest.raises(ValueError):
        sample_sr(lambda *a: a[0], sched, torch.rand(1, 3, 4, 4))
