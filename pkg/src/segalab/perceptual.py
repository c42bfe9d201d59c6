"""Pixel-domain JND maps, SSIM and perturbation-size reporting."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import filters
from .tensorcore import PIXEL_SCALE

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luma(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    if x.shape[2] == 1:
        return x[:, :, 0]
    return x @ LUMA_WEIGHTS


@dataclass(frozen=True)
class JndParams:
    """Luminance-adaptation and texture-masking constants (0-255 luma units)."""

    t0: float = 17.0
    gamma: float = 3.0
    slope: float = 3.0 / 128.0
    texture_gain: float = 1.0
    overlap: float = 0.3
    window: int = 5

    def __post_init__(self):
        if min(self.t0, self.gamma, self.slope, self.texture_gain) <= 0:
            raise ValueError("JND constants must be > 0")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd size")


def luminance_adaptation(background: np.ndarray, p: JndParams) -> np.ndarray:
    b = np.asarray(background, dtype=np.float64)
    dark = p.t0 * (1.0 - np.sqrt(np.clip(b, 0.0, None) / 127.0)) + p.gamma
    bright = p.slope * (b - 127.0) + p.gamma
    return np.where(b <= 127.0, dark, bright)


def texture_masking(y255: np.ndarray, p: JndParams) -> np.ndarray:
    img = y255[None, :, :, None]
    gh = filters.depthwise(img, filters.SOBEL_H)[0, :, :, 0]
    gv = filters.depthwise(img, filters.SOBEL_V)[0, :, :, 0]
    return p.texture_gain * filters.local_mean(np.hypot(gh, gv), p.window)


def jnd_map(x, params: JndParams | None = None) -> np.ndarray:
    """Per-pixel perturbation tolerance on the [0, 1] scale, shape (H, W)."""
    p = params or JndParams()
    y = luma(x) * PIXEL_SCALE
    la = luminance_adaptation(filters.local_mean(y, p.window), p)
    tm = texture_masking(y, p)
    jnd = la + tm - p.overlap * np.minimum(la, tm)
    return jnd / PIXEL_SCALE


def _gaussian_1d(size=11, std=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * std**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ g


def ssim(x, y, data_range: float = 1.0) -> float:
    """Mean SSIM over 11x11 Gaussian (std 1.5) windows on the luma channel."""
    a, b = luma(x), luma(y)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {np.shape(x)} vs {np.shape(y)}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = _gaussian_1d()
    if min(a.shape) < g.size:
        raise ValueError("images must be at least 11x11 for SSIM")
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class PerceptualReport:
    linf: float  # [0, 1] scale
    linf_255: float
    linf_display: int  # rounded to whole 0-255 levels
    l1: float  # per-pixel mean |delta|, 0-255 scale
    l2: float  # per-pixel RMS, [0, 1] scale
    ssim: float

    def to_dict(self) -> dict:
        return asdict(self)


def perceptual_report(x, x_adv) -> PerceptualReport:
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    delta = np.abs(x_adv - x)
    linf = float(delta.max())
    return PerceptualReport(
        linf=linf,
        linf_255=linf * PIXEL_SCALE,
        linf_display=int(np.rint(linf * PIXEL_SCALE)),
        l1=float(delta.mean() * PIXEL_SCALE),
        l2=float(np.sqrt(np.mean(delta * delta))),
        ssim=ssim(x, x_adv),
    )
