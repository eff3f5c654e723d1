"""Procedural HR image sets and in-memory (HR, LR, bicubic) training triples."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .imaging import load_png, make_lr_pair, save_png



@dataclass
class DatasetSpec:
    count: int = 200
    hr_size: int = 64
    scale: int = 4
    seed: int = 0
    family: str = "mixed"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.hr_size % self.scale or self.hr_size % 8:
            raise ValueError(f"hr_size {self.hr_size} must be divisible by 8 and by scale {self.scale}")
        if self.family not in GENERATORS:
            raise ValueError(f"unknown family {self.family!r}")


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def gradient_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = _grid(size)
    theta = rng.uniform(0, 2 * np.pi)
    u = (np.cos(theta) * xx + np.sin(theta) * yy) / size
    u = (u - u.min()) / max(u.max() - u.min(), 1e-9)
    c0, c1 = rng.uniform(0, 1, (2, 3, 1, 1))
    return c0 * (1 - u) + c1 * u


def checker_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = _grid(size)
    py, px = rng.integers(8, 25, size=2)
    oy, ox = rng.integers(0, 2 * max(py, px), size=2)
    mask = ((np.floor((yy + oy) / py) + np.floor((xx + ox) / px)) % 2)[None]
    c0, c1 = rng.uniform(0, 1, (2, 3, 1, 1))
    return c0 * (1 - mask) + c1 * mask


def blob_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = _grid(size)
    img = np.broadcast_to(rng.uniform(0, 0.5, (3, 1, 1)), (3, size, size)).copy()
    for _ in range(rng.integers(3, 9)):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(2, 10)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        img += rng.uniform(-0.5, 0.8, (3, 1, 1)) * g
    return np.clip(img, 0, 1)


def mixed_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Gradient background, a checkerboard patch in a random rectangle, a few blobs."""
    img = gradient_image(rng, size)
    y0, x0 = rng.integers(0, size // 2, size=2)
    h, w = rng.integers(size // 4, size // 2 + 1, size=2)
    img[:, y0:y0 + h, x0:x0 + w] = checker_image(rng, size)[:, y0:y0 + h, x0:x0 + w]
    yy, xx = _grid(size)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, size, 2)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rng.uniform(2, 8) ** 2))
        img += rng.uniform(-0.4, 0.4, (3, 1, 1)) * g
    return np.clip(img, 0, 1)


GENERATORS = {"gradients": gradient_image, "checkers": checker_image, "blobs": blob_image,
              "mixed": mixed_image}


def synth_image(rng: np.random.Generator, size: int, family: str) -> np.ndarray:
    return GENERATORS[family](rng, size)


def synth_dataset(spec: DatasetSpec, out_dir) -> dict:
    """Write ``spec.count`` PNGs plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    files = []
    for i, child in enumerate(children):
        img = synth_image(np.random.default_rng(child), spec.hr_size, spec.family)
        name = f"img_{i:05d}.png"
        try:
            save_png(out / name, img)
        except OSError as e:
            raise OSError(f"failed to write {out / name}: {e}") from e
        files.append(name)
    manifest = {"spec": asdict(spec), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


class PairDataset:
    """HR images with their bicubic LR and re-upsampled counterparts, all in memory."""

    def __init__(self, hr: torch.Tensor, scale: int, names=None):
        self.hr = hr
        self.scale = scale
        self.lr, self.mu = make_lr_pair(hr.double(), scale)
        self.lr, self.mu = self.lr.to(hr.dtype), self.mu.to(hr.dtype)
        self.names = list(names) if names is not None else [f"{i:05d}" for i in range(len(hr))]

    def __len__(self):
        return self.hr.shape[0]

    @classmethod
    def from_dir(cls, path, scale: int, dtype=torch.float32):
        path = Path(path)
        files = sorted(path.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {path}")
        hr = torch.stack([load_png(f) for f in files]).to(dtype)
        return cls(hr, scale, [f.name for f in files])
