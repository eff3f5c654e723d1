"""Toy end-to-end run: synthesize data, train a tiny model, super-resolve the test set."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .cpem import CpemConfig
from .data import DatasetSpec, PairDataset, synth_dataset
from .eanet import EanetConfig, count_parameters
from .metrics import avg_gradient, psnr, ssim
from .model import EDiffSR
from .sampling import SampleConfig, sample_sr
from .schedule import build_schedule
from .training import TrainConfig, save_checkpoint, train_loop


@dataclass
class ToyConfig:
    train_count: int = 200
    test_count: int = 20
    hr_size: int = 64
    scale: int = 4
    channels: int = 16
    enc_counts: list = field(default_factory=lambda: [2, 1, 1, 1])
    dec_counts: list = field(default_factory=lambda: [1, 1, 1, 1])
    mid_count: int = 1
    time_dim: int = 256
    cpem_n_rcab: int = 2
    cpem_channels: int = 32
    iterations: int = 2000
    batch_size: int = 4
    lr_init: float = 1e-3
    lr_min: float = 1e-6
    seed: int = 0
    window: int = 100  # leading/trailing loss window

    def model(self) -> EDiffSR:
        torch.manual_seed(self.seed)
        return EDiffSR(
            EanetConfig(self.channels, self.enc_counts, self.dec_counts, self.mid_count, time_dim=self.time_dim),
            CpemConfig(self.cpem_n_rcab, self.cpem_channels, self.scale, ca_reduction=16))

    def train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, batch_size=self.batch_size, lr_init=self.lr_init,
                           lr_min=self.lr_min, seed=self.seed, checkpoint_every=0)


@dataclass
class ToyResult:
    leading_loss: float
    trailing_loss: float
    psnr_sr: float
    psnr_bicubic: float
    ssim_sr: float
    ssim_bicubic: float
    ag_sr: float
    ag_bicubic: float
    parameters: int
    train_seconds: float
    sample_seconds: float

    def rows(self):
        return [
            ("loss leading/trailing", f"{self.leading_loss:.5f} / {self.trailing_loss:.5f} "
                                      f"(ratio {self.trailing_loss / self.leading_loss:.3f})"),
            ("psnr sr/bicubic", f"{self.psnr_sr:.3f} / {self.psnr_bicubic:.3f} dB"),
            ("ssim sr/bicubic", f"{self.ssim_sr:.4f} / {self.ssim_bicubic:.4f}"),
            ("ag sr/bicubic", f"{self.ag_sr:.5f} / {self.ag_bicubic:.5f}"),
            ("parameters", str(self.parameters)),
            ("seconds train/sample", f"{self.train_seconds:.0f} / {self.sample_seconds:.0f}"),
        ]


def _mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs)


def run_toy(cfg: ToyConfig, work_dir, log=print) -> ToyResult:
    work = Path(work_dir)
    synth_dataset(DatasetSpec(cfg.train_count, cfg.hr_size, cfg.scale, seed=cfg.seed), work / "train")
    synth_dataset(DatasetSpec(cfg.test_count, cfg.hr_size, cfg.scale, seed=cfg.seed + 1), work / "test")
    train = PairDataset.from_dir(work / "train", cfg.scale)
    test = PairDataset.from_dir(work / "test", cfg.scale)
    s = build_schedule()
    model = cfg.model()
    log(f"toy model: {count_parameters(model)} parameters, {cfg.iterations} iterations")

    t0 = time.perf_counter()
    ckpt, trace = train_loop(cfg.train_config(), train, model, s, out_dir=work / "run")
    train_s = time.perf_counter() - t0
    save_checkpoint(work / "run" / "toy.ckpt", ckpt)
    losses = [row[1] for row in trace]
    w = min(cfg.window, len(losses))

    t0 = time.perf_counter()
    sr = sample_sr(model, s, test.lr, SampleConfig(stochastic=False))
    sample_s = time.perf_counter() - t0
    pairs = list(zip(sr, test.mu, test.hr))
    return ToyResult(
        leading_loss=_mean(losses[:w]),
        trailing_loss=_mean(losses[-w:]),
        psnr_sr=_mean(psnr(a, h) for a, _, h in pairs),
        psnr_bicubic=_mean(psnr(m, h) for _, m, h in pairs),
        ssim_sr=_mean(ssim(a, h) for a, _, h in pairs),
        ssim_bicubic=_mean(ssim(m, h) for _, m, h in pairs),
        ag_sr=_mean(avg_gradient(a) for a, _, _ in pairs),
        ag_bicubic=_mean(avg_gradient(m) for _, m, _ in pairs),
        parameters=count_parameters(model),
        train_seconds=train_s,
        sample_seconds=sample_s,
    )
