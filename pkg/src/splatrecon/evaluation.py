"""Rendering-quality evaluation over view lists."""
from __future__ import annotations

import numpy as np

from .losses import psnr, ssim
from .rasterizer import render
from .scene import Scene, assemble_frame, decode
from .views import View


def render_view(scene: Scene, net, view: View, background=None) -> np.ndarray:
    return render(decode(assemble_frame(scene, view.frame), net), view.camera, background).image


def evaluate_views(scene: Scene, net, views: list[View], background=None) -> dict:
    """Mean PSNR/SSIM of the scene rendered against each view's truth image."""
    per_view = []
    for v in views:
        img = render_view(scene, net, v, background)
        per_view.append({"frame": v.frame, "psnr": psnr(img, v.image), "ssim": ssim(img, v.image)})
    return {
        "psnr": float(np.mean([p["psnr"] for p in per_view])),
        "ssim": float(np.mean([p["ssim"] for p in per_view])),
        "views": per_view,
    }
