"""Image quality metrics: PSNR and windowed SSIM."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch

PSNR_CAP = 99.0

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def gaussian_kernel1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def filter2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded separable correlation over the first two axes ("same" size).

    The kernel is symmetric, so this operator is its own adjoint.
    """
    r = len(kernel) // 2
    out = img
    for axis in (0, 1):
        n = out.shape[axis]
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        p = np.pad(out, pad)
        acc = np.zeros_like(out, dtype=float)
        for i, w in enumerate(kernel):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(i, i + n)
            acc += w * p[tuple(sl)]
        out = acc
    return out


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None,
         data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[:2]:
            raise ShapeMismatch("mask shape differs from image shape")
        diff = diff[m]
        if diff.size == 0:
            raise ValueError("empty PSNR mask")
    mse = float(np.mean(diff))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range ** 2 / mse))


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM (mean over channels for color images)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    k = gaussian_kernel1d()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = filter2d(a, k)
    mu_b = filter2d(b, k)
    saa = filter2d(a * a, k) - mu_a ** 2
    sbb = filter2d(b * b, k) - mu_b ** 2
    sab = filter2d(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    s = num / den
    return s.mean(axis=2) if s.ndim == 3 else s


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None,
         data_range: float = 1.0) -> float:
    s = ssim_map(a, b, data_range)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise ValueError("empty SSIM mask")
        return float(s[m].mean())
    return float(s.mean())
