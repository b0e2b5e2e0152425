"""Lift 2D image evidence into 3D by rendering the current scene at each
source view and backpropagating the photometric error to the raw feature
channels, accumulated over views and optionally normalized per channel."""
from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .autodiff import Tensor
from .losses import photometric_loss
from .render_ops import render_cloud_tensor
from .scene import Scene, assemble_frame_tensors
from .views import View


class NoSourceViews(Exception):
    pass


@dataclass
class LiftedGradient:
    """Accumulated photometric gradients w.r.t. raw channels, rows in
    assembled group order (background, actors, sky), canonical coordinates."""

    matrix: np.ndarray            # (M_total, C)
    channel_maxabs: np.ndarray    # (C,) max |grad| per channel before normalization
    slices: dict[str, slice]
    normalized: bool

    def group(self, name: str) -> np.ndarray:
        return self.matrix[self.slices[name]]


def frozen_decode(net) -> SimpleNamespace:
    """Constant view of a decode net so lifting never writes into its grads."""
    return SimpleNamespace(w=Tensor(net.w.data), b=Tensor(net.b.data))


def lift(scene: Scene, views: list[View], net, normalize: bool = True,
         background=None) -> LiftedGradient:
    """Sum of per-view photometric gradients w.r.t. every group's channels.

    Frozen channels (sky positions) are zeroed before normalization; actor
    gradients arrive in canonical coordinates via the transform's transpose.
    """
    if not views:
        raise NoSourceViews("lift needs at least one source view")
    const_net = frozen_decode(net)
    leaves = {name: Tensor(arr, requires_grad=True) for name, arr in scene.group_arrays().items()}
    for view in views:
        assembled = assemble_frame_tensors(scene, view.frame, leaves)
        img, _ = render_cloud_tensor(assembled, const_net, view.camera, background)
        loss = photometric_loss([img], [view.image])
        loss.backward()

    slices = scene.group_slices()
    total = scene.total_count
    channels = scene.channels
    matrix = np.zeros((total, channels), dtype=scene.background.dtype)
    for name, arr in scene.group_arrays().items():
        g = leaves[name].grad
        if g is not None:
            matrix[slices[name]] = g
        for ch in scene.frozen_channels(name):
            matrix[slices[name], ch] = 0.0

    maxabs = np.abs(matrix).max(axis=0)
    if normalize:
        divisor = np.where(maxabs > 0, maxabs, 1.0)
        matrix = matrix / divisor
    return LiftedGradient(matrix=matrix, channel_maxabs=maxabs, slices=slices,
                          normalized=normalize)


def lift_batched(scene: Scene, views: list[View], net, fraction: float,
                 rng: np.random.Generator, normalize: bool = True,
                 background=None) -> LiftedGradient:
    """Lift over a seeded random subset of the source views."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not views:
        raise NoSourceViews("lift needs at least one source view")
    if fraction >= 1.0:
        return lift(scene, views, net, normalize=normalize, background=background)
    k = max(1, int(round(fraction * len(views))))
    chosen = sorted(rng.choice(len(views), size=k, replace=False))
    return lift(scene, [views[i] for i in chosen], net, normalize=normalize,
                background=background)
