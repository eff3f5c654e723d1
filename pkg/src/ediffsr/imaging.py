"""Bicubic resampling and 8-bit PNG I/O."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

CUBIC_A = -0.5


def cubic_kernel(x, a: float = CUBIC_A):
    x = torch.as_tensor(x, dtype=torch.float64).abs()
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return torch.where(x <= 1, near, torch.where(x < 2, far, torch.zeros_like(x)))


def _taps(n_in: int, n_out: int):
    """Source indices (clamped) and weights, each (n_out, 4)."""
    scale = n_in / n_out
    src = (torch.arange(n_out, dtype=torch.float64) + 0.5) * scale - 0.5
    base = torch.floor(src)
    offsets = torch.arange(-1, 3, dtype=torch.float64)
    pos = base[:, None] + offsets
    weights = cubic_kernel(src[:, None] - pos)
    idx = pos.long().clamp(0, n_in - 1)
    return idx, weights


def _resize_axis(x, n_out: int, dim: int):
    idx, w = _taps(x.shape[dim], n_out)
    x = x.movedim(dim, -1)
    w = w.to(x.dtype)
    gathered = x[..., idx]  # (..., n_out, 4)
    # anchor on the nearest left tap so constant rows are reproduced exactly
    anchor = gathered[..., 1:2]
    out = anchor[..., 0] + ((gathered - anchor) * w).sum(-1)
    return out.movedim(-1, dim)


def bicubic_resize(img, out_h: int, out_w: int):
    """Separable Catmull-Rom resize of a (..., H, W) tensor, clamp-to-edge, pixel centres."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {(out_h, out_w)}")
    return _resize_axis(_resize_axis(img, out_h, -2), out_w, -1)


def make_lr_pair(hr, r: int):
    h, w = hr.shape[-2:]
    if h % r or w % r:
        raise ValueError(f"HR size {(h, w)} not divisible by scale {r}")
    v = bicubic_resize(hr, h // r, w // r)
    return v, bicubic_resize(v, h, w)


def load_png(path) -> torch.Tensor:
    """Read an image as a float32 (3, H, W) tensor on [0, 1]; gray is replicated."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr / 255.0).permute(2, 0, 1).contiguous()


def to_uint8(img) -> np.ndarray:
    arr = torch.as_tensor(img).detach().cpu().double().numpy()
    arr = np.nan_to_num(arr, nan=0.0)
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, img):
    arr = to_uint8(img)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def required_padding(size: int, multiple: int) -> int:
    return (-size) % multiple if multiple > 1 else 0
