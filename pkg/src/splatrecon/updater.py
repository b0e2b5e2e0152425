"""Learned scene-reconstruction optimizer.

Three update networks (background / actors / sky) map a point's current
features, its lifted gradient, a step embedding, and a mean-pooled
neighborhood of gradients to a bounded feature update; a decaying schedule
scales the update at each refinement step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor
from .lifting import LiftedGradient, lift, lift_batched
from .nn import MLP, timestep_embedding
from .scene import DecodeNet, POS, Scene
from .views import View

EMBED_DIM = 16


class StepOutOfRange(Exception):
    pass


@dataclass
class Schedule:
    kind: str = "cosine"        # "cosine" (decaying) or "constant"
    gamma_max: float = 1.0
    constant: float = 0.3
    steps: int = 24

    def __post_init__(self):
        if self.kind not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def gamma(sched: Schedule, t: int) -> float:
    if not (0 <= t < sched.steps):
        raise StepOutOfRange(f"step {t} not in [0, {sched.steps})")
    if sched.kind == "constant":
        return sched.constant
    return sched.gamma_max * float(np.cos(np.pi * t / (2.0 * sched.steps)) ** 2)


class UpdateNet:
    """Pointwise MLP over [features, gradient, step embedding, pooled
    neighborhood gradient] with a tanh head, so per-step updates stay in
    (-1, 1) per channel before the schedule scaling."""

    def __init__(self, channels: int, hidden=(128, 128), rng=None, dtype=np.float32):
        self.channels = channels
        self.in_dim = 3 * channels + EMBED_DIM
        self.mlp = MLP([self.in_dim, *hidden, channels], activation="relu",
                       out_activation="tanh", rng=rng, dtype=dtype)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def delta(self, h: np.ndarray, grad: np.ndarray, t: int, horizon: int,
              pooled: np.ndarray) -> Tensor:
        """Predicted update as a tensor with gradients to the net parameters;
        the inputs themselves are constants (first-order contract)."""
        mean = h.mean(axis=0, keepdims=True)
        std = h.std(axis=0, keepdims=True) + 1e-6
        h_std = (h - mean) / std
        emb = timestep_embedding(t, horizon, EMBED_DIM).astype(h.dtype)
        emb_tile = np.broadcast_to(emb, (h.shape[0], EMBED_DIM))
        x = np.concatenate([h_std, grad, emb_tile, pooled], axis=1)
        return self.mlp(Tensor(x.astype(h.dtype)))


@dataclass
class ReconModel:
    """Update networks plus the shared decode network."""

    background: UpdateNet
    actors: UpdateNet
    sky: UpdateNet
    decode: DecodeNet
    channels: int
    schedule: Schedule = field(default_factory=Schedule)

    def net_for(self, group: str) -> UpdateNet:
        if group == "background":
            return self.background
        if group == "sky":
            return self.sky
        return self.actors

    def parameters(self) -> list[Tensor]:
        return (self.background.parameters() + self.actors.parameters()
                + self.sky.parameters() + self.decode.parameters())


@dataclass
class AblationFlags:
    latent_channels: bool = True      # False -> C = 14, physical channels only
    iterative: bool = True            # False -> single update step (T = 1)
    decaying_schedule: bool = True    # False -> constant 0.3 update scale


def build_model(channels: int = 46, hidden=(128, 128), schedule: Schedule | None = None,
                seed: int = 0, flags: AblationFlags | None = None,
                dtype=np.float32) -> ReconModel:
    flags = flags or AblationFlags()
    if not flags.latent_channels:
        channels = 14
    sched = schedule or Schedule()
    if not flags.iterative:
        sched = Schedule(kind=sched.kind, gamma_max=sched.gamma_max,
                         constant=sched.constant, steps=1)
    if not flags.decaying_schedule:
        sched = Schedule(kind="constant", constant=0.3, steps=sched.steps)
    rng = np.random.default_rng(seed)
    return ReconModel(
        background=UpdateNet(channels, hidden, rng=rng, dtype=dtype),
        actors=UpdateNet(channels, hidden, rng=rng, dtype=dtype),
        sky=UpdateNet(channels, hidden, rng=rng, dtype=dtype),
        decode=DecodeNet(channels, dtype=dtype),
        channels=channels,
        schedule=sched,
    )


def build_knn(scene: Scene, k: int = 16) -> dict[str, np.ndarray]:
    """Neighbor indices per group from the initial positions; computed once
    per scene since the bounded updates move points very little."""
    graphs = {}
    for name, arr in scene.group_arrays().items():
        pts = arr[:, POS].astype(np.float64)
        kk = min(k, pts.shape[0] - 1)
        if kk <= 0:
            graphs[name] = np.zeros((pts.shape[0], 1), dtype=np.int64)
            continue
        _, idx = cKDTree(pts).query(pts, k=kk + 1)
        graphs[name] = idx[:, 1:]
    return graphs


def _pooled(grad_rows: np.ndarray, knn: np.ndarray) -> np.ndarray:
    return grad_rows[knn].mean(axis=1)


def step_tensors(scene: Scene, lifted: LiftedGradient, model: ReconModel,
                 t: int, knn: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """One refinement step; returns per-group updated channels as tensors
    whose graph reaches the update-network parameters."""
    g = gamma(model.schedule, t)
    out: dict[str, Tensor] = {}
    for name, arr in scene.group_arrays().items():
        grad_rows = lifted.group(name)
        delta = model.net_for(name).delta(arr, grad_rows, t, model.schedule.steps,
                                          _pooled(grad_rows, knn[name]))
        frozen = scene.frozen_channels(name)
        if frozen:
            mask = np.ones(scene.channels, dtype=arr.dtype)
            mask[frozen] = 0.0
            delta = delta * Tensor(mask)
        out[name] = Tensor(arr) + g * delta
    return out


def step(scene: Scene, lifted: LiftedGradient, model: ReconModel, t: int,
         knn: dict[str, np.ndarray]) -> Scene:
    """Non-differentiable step: applies the update and returns a new scene."""
    tensors = step_tensors(scene, lifted, model, t, knn)
    new_scene = scene.copy()
    for name, tensor in tensors.items():
        new_scene.set_group(name, tensor.data)
    return new_scene


def reconstruct(scene0: Scene, source_views: list[View], model: ReconModel,
                steps: int | None = None, view_fraction: float = 1.0,
                seed: int = 0, background=None,
                progress=None) -> tuple[Scene, list[dict]]:
    """Iteratively refine the scene from its initialization.

    Runs ``steps`` update rounds (defaults to the model schedule), each one
    lifting the source views into gradients and applying the learned update.
    """
    total = model.schedule.steps if steps is None else steps
    if total > model.schedule.steps:
        raise StepOutOfRange(f"{total} steps exceeds schedule horizon {model.schedule.steps}")
    rng = np.random.default_rng(seed)
    scene = scene0.copy()
    knn = build_knn(scene0)
    log = []
    for t in range(total):
        if view_fraction < 1.0:
            lifted = lift_batched(scene, source_views, model.decode, view_fraction,
                                  rng, normalize=True, background=background)
        else:
            lifted = lift(scene, source_views, model.decode, normalize=True,
                          background=background)
        scene = step(scene, lifted, model, t, knn)
        entry = {"step": t, "gamma": gamma(model.schedule, t),
                 "grad_maxabs": float(lifted.channel_maxabs.max())}
        log.append(entry)
        if progress is not None:
            progress(entry)
    return scene, log
