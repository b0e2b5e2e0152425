"""Autodiff bridge for the rasterizer: rendering as a graph operation whose
backward pass is the analytic splat VJP."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geom import Camera
from .rasterizer import ExplicitGaussians, RenderOutput, render, render_backward


def render_tensor(pos: Tensor, scale: Tensor, quat: Tensor, color: Tensor,
                  opacity: Tensor, cam: Camera, background=None) -> tuple[Tensor, RenderOutput]:
    """Render decoded attributes; returns the image tensor plus the raw output
    (transmittance and friends) for callers that want the side buffers."""
    g = ExplicitGaussians(pos.data, scale.data, quat.data, color.data, opacity.data)
    out = render(g, cam, background)

    def vjp(grad_img: np.ndarray):
        grads = render_backward(g, cam, out, grad_img)
        return grads.pos, grads.scale, grads.quat, grads.color, grads.opacity

    return ad.custom((pos, scale, quat, color, opacity), out.image, vjp), out


def render_cloud_tensor(cloud: Tensor, net, cam: Camera, background=None) -> tuple[Tensor, RenderOutput]:
    """Decode a raw feature cloud and render it, all differentiably."""
    from .scene import decode_tensors

    d = decode_tensors(cloud, net)
    return render_tensor(d["pos"], d["scale"], d["quat"], d["color"], d["opacity"],
                         cam, background)
