"""Same-size 2-D correlation with edge replication, and its exact adjoint.

Arrays are batched ``(N, H, W, C)``.  The adjoint routes every gradient
contribution through the padding back onto the border pixel it replicated,
so ``<conv(x), g> == <x, conv_adjoint(g)>`` holds to rounding.
"""

from __future__ import annotations

import numpy as np


def _pads(kernel: np.ndarray, dilation: int) -> tuple[int, int]:
    kh, kw = kernel.shape[:2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd")
    return dilation * (kh // 2), dilation * (kw // 2)


def _offsets(kernel, dilation):
    return [
        (a * dilation, b * dilation)
        for a in range(kernel.shape[0])
        for b in range(kernel.shape[1])
    ]


def correlate(x: np.ndarray, kernel: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Correlate ``x`` (N,H,W,Cin) with ``kernel`` (kh,kw,Cin,Cout)."""
    n, h, w, _ = x.shape
    ph, pw = _pads(kernel, dilation)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)), mode="edge")
    cols = np.concatenate([xp[:, a : a + h, b : b + w] for a, b in _offsets(kernel, dilation)], axis=3)
    return cols @ kernel.reshape(-1, kernel.shape[3])


def correlate_adjoint(g: np.ndarray, kernel: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Adjoint of :func:`correlate` applied to ``g`` (N,H,W,Cout)."""
    n, h, w, _ = g.shape
    cin = kernel.shape[2]
    ph, pw = _pads(kernel, dilation)
    gcols = g @ kernel.reshape(-1, kernel.shape[3]).T
    gp = np.zeros((n, h + 2 * ph, w + 2 * pw, cin))
    for t, (a, b) in enumerate(_offsets(kernel, dilation)):
        gp[:, a : a + h, b : b + w] += gcols[..., t * cin : (t + 1) * cin]
    # fold the replicated borders back onto the edge pixels
    if ph:
        gp[:, ph] += gp[:, :ph].sum(axis=1)
        gp[:, ph + h - 1] += gp[:, ph + h :].sum(axis=1)
    if pw:
        gp[:, :, pw] += gp[:, :, :pw].sum(axis=2)
        gp[:, :, pw + w - 1] += gp[:, :, pw + w :].sum(axis=2)
    return gp[:, ph : ph + h, pw : pw + w]


def depthwise(x: np.ndarray, kernel2d: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Apply one (kh,kw) kernel to every channel independently."""
    n, h, w, c = x.shape
    flat = np.moveaxis(x, 3, 1).reshape(n * c, h, w, 1)
    out = correlate(flat, kernel2d[:, :, None, None], dilation)
    return np.moveaxis(out.reshape(n, c, h, w), 1, 3)


def depthwise_adjoint(g: np.ndarray, kernel2d: np.ndarray, dilation: int = 1) -> np.ndarray:
    n, h, w, c = g.shape
    flat = np.moveaxis(g, 3, 1).reshape(n * c, h, w, 1)
    out = correlate_adjoint(flat, kernel2d[:, :, None, None], dilation)
    return np.moveaxis(out.reshape(n, c, h, w), 1, 3)


SOBEL_H = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
SOBEL_V = SOBEL_H.T.copy()
BINOMIAL5 = np.outer([1.0, 4.0, 6.0, 4.0, 1.0], [1.0, 4.0, 6.0, 4.0, 1.0]) / 256.0


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * std**2))
    k = np.outer(g, g)
    return k / k.sum()


def local_mean(x2d: np.ndarray, size: int) -> np.ndarray:
    """Edge-replicated box mean of a single (H, W) map."""
    return depthwise(x2d[None, :, :, None], box_kernel(size))[0, :, :, 0]
