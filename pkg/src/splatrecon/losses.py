"""Training losses and image quality metrics (PSNR, SSIM)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import convolve2d

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor


@dataclass
class LossWeights:
    lambda_perceptual: float = 0.0   # weight of the pluggable perceptual term
    lambda_reg: float = 0.01
    eps_scale: float = 0.05          # meters; hinge threshold on the smallest scale
    perceptual_fn: Optional[Callable[[Tensor, np.ndarray], Tensor]] = None

    def __post_init__(self):
        if self.lambda_perceptual < 0 or self.lambda_reg < 0 or self.eps_scale < 0:
            raise ValueError("loss weights must be non-negative")


def photometric_loss(rendered: Sequence[Tensor], truth: Sequence[np.ndarray]) -> Tensor:
    """Sum over views of the mean squared pixel error."""
    if len(rendered) != len(truth):
        raise ShapeMismatch(f"{len(rendered)} rendered vs {len(truth)} truth images")
    total = None
    for r, t in zip(rendered, truth):
        if r.shape != t.shape:
            raise ShapeMismatch(f"image shapes {r.shape} vs {t.shape}")
        term = ad.tmean(ad.square(r - Tensor(t)))
        total = term if total is None else total + term
    return total


def scale_reg(scale: Tensor, eps: float) -> Tensor:
    """Hinge pushing each splat's smallest scale below eps (flatness prior)."""
    dmin = ad.amin(scale, axis=1)
    return ad.tsum(ad.maximum(dmin - eps, ad.Tensor(np.zeros_like(dmin.data))))


def total_loss(rendered: Sequence[Tensor], truth: Sequence[np.ndarray],
               scale: Tensor | None, weights: LossWeights) -> Tensor:
    loss = photometric_loss(rendered, truth)
    if weights.lambda_reg > 0 and scale is not None:
        loss = loss + weights.lambda_reg * scale_reg(scale, weights.eps_scale)
    if weights.lambda_perceptual > 0 and weights.perceptual_fn is not None:
        for r, t in zip(rendered, truth):
            loss = loss + weights.lambda_perceptual * weights.perceptual_fn(r, t)
    return loss


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-peak images; inf when equal."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) on the
    channel-averaged luminance; mean over valid (unpadded) windows."""
    x = np.asarray(a, dtype=np.float64).mean(axis=2)
    y = np.asarray(b, dtype=np.float64).mean(axis=2)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    win = _gaussian_window()
    c1 = 0.01**2
    c2 = 0.03**2

    def f(img):
        return convolve2d(img, win, mode="valid")

    mu_x = f(x)
    mu_y = f(y)
    sig_x = f(x * x) - mu_x**2
    sig_y = f(y * y) - mu_y**2
    sig_xy = f(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sig_xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sig_x + sig_y + c2)
    return float(np.mean(num / den))
