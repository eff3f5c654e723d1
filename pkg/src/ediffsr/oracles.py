"""Slow, direct reference implementations used only for verification."""
from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct-sum cross-correlation over NCHW numpy arrays."""
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    n, c_in, h, wd = x.shape
    c_out, cpg, k, _ = w.shape
    opg = c_out // groups
    xp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for ni in range(n):
        for co in range(c_out):
            g = co // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cpg):
                        for u in range(k):
                            for v in range(k):
                                acc += w[co, ci, u, v] * xp[ni, g * cpg + ci, i * stride + u, j * stride + v]
                    out[ni, co, i, j] = acc
    return out


def cubic(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def resize_matrix_1d(n_in, n_out, a=-0.5):
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        lo = math.floor(src) - 1
        for tap in range(lo, lo + 4):
            m[i, min(max(tap, 0), n_in - 1)] += cubic(src - tap, a)
    return m


def dense_resize(img, out_h, out_w):
    """Resize (H, W) by one dense (out_h*out_w, H*W) matrix built pixel by pixel."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    rh, rw = resize_matrix_1d(h, out_h), resize_matrix_1d(w, out_w)
    dense = np.zeros((out_h * out_w, h * w))
    for oi in range(out_h):
        for oj in range(out_w):
            for si in np.nonzero(rh[oi])[0]:
                for sj in np.nonzero(rw[oj])[0]:
                    dense[oi * out_w + oj, si * w + sj] += rh[oi, si] * rw[oj, sj]
    return (dense @ img.reshape(-1)).reshape(out_h, out_w)


def naive_psnr(a, b, peak=1.0):
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    mse = total / len(a)
    return 99.0 if mse == 0 else 10 * math.log10(peak * peak / mse)


def naive_ssim(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Per-window SSIM on 2-D luminance arrays, averaged over valid windows."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    scores = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px, py = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            mx, my = (g * px).sum(), (g * py).sum()
            vx = (g * (px - mx) ** 2).sum()
            vy = (g * (py - my) ** 2).sum()
            cov = (g * (px - mx) * (py - my)).sum()
            scores.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


def naive_avg_gradient(y):
    y = np.asarray(y, dtype=np.float64)
    total, count = 0.0, 0
    for i in range(y.shape[0] - 1):
        for j in range(y.shape[1] - 1):
            dx = y[i, j + 1] - y[i, j]
            dy = y[i + 1, j] - y[i, j]
            total += math.sqrt((dx * dx + dy * dy) / 2)
            count += 1
    return total / count
