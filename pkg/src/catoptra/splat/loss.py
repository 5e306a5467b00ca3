"""Color, structural and hull-weighted depth losses with image-space gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoValidPixels, ShapeMismatch
from ..metrics import SSIM_K1, SSIM_K2, filter2d, gaussian_kernel1d
from .gaussians import sigmoid

SIGNS = {"as-printed": 1.0, "flipped": -1.0}


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.8
    dssim: float = 0.2
    depth: float = 0.5

    def __post_init__(self):
        if min(self.l1, self.dssim, self.depth) < 0:
            raise ValueError("loss weights must be non-negative")


def _sign(sign) -> float:
    if isinstance(sign, str):
        try:
            return SIGNS[sign]
        except KeyError:
            raise ValueError(f"sign must be one of {sorted(SIGNS)}") from None
    return float(np.sign(sign)) or 1.0


def depth_weight(delta, sign="as-printed", temperature: float = 1.0):
    """S-shaped weight ``2 / (1 + exp(s * delta / tau))``; 1 at zero, limits 0 and 2."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    x = _sign(sign) * np.asarray(delta, dtype=float) / temperature
    w = 2.0 * sigmoid(-np.atleast_1d(x))
    return w.reshape(np.shape(x)) if np.ndim(x) else float(w[0])


def depth_weight_derivative(delta, sign="as-printed", temperature: float = 1.0):
    w = np.asarray(depth_weight(delta, sign, temperature))
    return -(_sign(sign) / temperature) * w * (1.0 - 0.5 * w)


@dataclass(eq=False)
class DepthPair:
    rendered: np.ndarray  # D_render
    hull: np.ndarray  # D_VH, inf off the hull

    def __post_init__(self):
        self.rendered = np.asarray(self.rendered, dtype=float)
        self.hull = np.asarray(self.hull, dtype=float)
        if self.rendered.shape != self.hull.shape:
            raise ShapeMismatch(f"{self.rendered.shape} vs {self.hull.shape}")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.rendered) & np.isfinite(self.hull)

    @property
    def residual(self) -> np.ndarray:
        out = np.full(self.rendered.shape, np.nan)
        v = self.valid
        out[v] = self.rendered[v] - self.hull[v]
        return out


def depth_loss(pair: DepthPair, sign="as-printed", temperature: float = 1.0, grad: bool = False):
    """Mean of ``w(delta) * |delta|`` over valid pixels (and d/dD_render when ``grad``)."""
    valid = pair.valid
    n = int(valid.sum())
    if n == 0:
        raise NoValidPixels("no pixel has both a rendered and a hull depth")
    dd = pair.rendered[valid] - pair.hull[valid]
    w = depth_weight(dd, sign, temperature)
    value = float(np.sum(w * np.abs(dd)) / n)
    if not grad:
        return value
    g = np.zeros(pair.rendered.shape)
    wp = depth_weight_derivative(dd, sign, temperature)
    g[valid] = (wp * np.abs(dd) + w * np.sign(dd)) / n
    return value, g


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise ShapeMismatch(f"mask {m.shape} vs image {shape}")
    if not m.any():
        raise NoValidPixels("empty loss mask")
    return m


def l1_loss(rendered, reference, mask=None, grad: bool = False):
    """Mean absolute color error over masked pixels and channels."""
    a = np.asarray(rendered, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    m = _mask(mask, a.shape[:2])
    count = m.sum() * a.shape[2]
    diff = (a - b) * m[..., None]
    value = float(np.abs(diff).sum() / count)
    if not grad:
        return value
    return value, np.sign(diff) / count


def dssim_loss(rendered, reference, mask=None, grad: bool = False, data_range: float = 1.0):
    """``(1 - SSIM) / 2`` with SSIM averaged over masked pixels and channels."""
    a = np.asarray(rendered, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    m = _mask(mask, a.shape[:2])
    k = gaussian_kernel1d()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = filter2d(a, k)
    mu_b = filter2d(b, k)
    e_aa = filter2d(a * a, k)
    e_bb = filter2d(b * b, k)
    e_ab = filter2d(a * b, k)
    A1 = 2 * mu_a * mu_b + c1
    A2 = 2 * (e_ab - mu_a * mu_b) + c2
    B1 = mu_a ** 2 + mu_b ** 2 + c1
    B2 = (e_aa - mu_a ** 2) + (e_bb - mu_b ** 2) + c2
    s = A1 * A2 / (B1 * B2)
    n = m.sum() * a.shape[2]
    value = float(0.5 * (1.0 - (s * m[..., None]).sum() / n))
    if not grad:
        return value
    g = np.broadcast_to(m[..., None] * (-0.5 / n), s.shape)
    d_mu = g * s * (2 * mu_b / A1 - 2 * mu_b / A2 - 2 * mu_a / B1 + 2 * mu_a / B2)
    d_eaa = g * (-s / B2)
    d_eab = g * (2 * s / A2)
    da = filter2d(d_mu, k) + 2 * a * filter2d(d_eaa, k) + b * filter2d(d_eab, k)
    return value, da


@dataclass(frozen=True)
class LossTerms:
    l1: float
    dssim: float
    depth: float
    total: float


def combined_loss(color, depth, reference, mask, hull_depth, weights: LossWeights = LossWeights(),
                  sign="as-printed", temperature: float = 1.0):
    """Weighted color, structure and depth loss with gradients w.r.t. color and depth images.

    ``color`` is the rendered image and ``reference`` the target already
    reduced to the loss region; ``mask`` selects the pixels that count.
    """
    color = np.asarray(color, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if color.shape != reference.shape or np.shape(depth) != color.shape[:2]:
        raise ShapeMismatch("rendered and reference images differ in resolution")
    l1, g1 = l1_loss(color, reference, mask, grad=True)
    ds, g2 = dssim_loss(color, reference, mask, grad=True)
    d_depth = np.zeros(color.shape[:2])
    ld = 0.0
    if weights.depth > 0:
        ld, gd = depth_loss(DepthPair(depth, hull_depth), sign, temperature, grad=True)
        d_depth = weights.depth * gd
    total = weights.l1 * l1 + weights.dssim * ds + weights.depth * ld
    d_color = weights.l1 * g1 + weights.dssim * g2
    return LossTerms(l1, ds, ld, float(total)), d_color, d_depth


def loss_region(reference_color, silhouette, region: str = "foreground", background=None):
    """Target image for the chosen loss region.

    ``"foreground"`` pastes the segmented object onto the flat background
    color; renders are composited over the same color, so splats leaking
    past the silhouette are penalized through their alpha. ``"full"`` keeps
    the reference as captured.
    """
    ref = np.asarray(reference_color, dtype=float)
    sil = np.asarray(silhouette, dtype=bool)
    if region == "foreground":
        bg = np.zeros(3) if background is None else np.asarray(background, dtype=float)
        return np.where(sil[..., None], ref, bg)
    if region == "full":
        return ref
    raise ValueError("region must be 'foreground' or 'full'")
