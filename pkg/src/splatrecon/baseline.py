"""Per-scene reconstruction by plain gradient descent.

Adam on the raw feature channels, driven by the unnormalized photometric
gradient aggregated over all source views each iteration, with a stepped
learning-rate decay. Shares the exact decode/render/loss path with the
learned optimizer so speed/quality comparisons are apples to apples.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import evaluate_views
from .lifting import lift
from .nn import adam_step_arrays
from .scene import Scene
from .updater import ReconModel, reconstruct
from .views import FrameSet, View


@dataclass
class DescentSchedule:
    base_lr: float = 0.1
    decay_points: tuple = (200, 300, 400, 450)
    factor: float = 0.5

    def lr(self, iteration: int) -> float:
        drops = sum(1 for p in self.decay_points if iteration >= p)
        return self.base_lr * self.factor**drops


def optimize(scene0: Scene, source_views: list[View], net, iters: int,
             schedule: DescentSchedule | None = None, background=None,
             log_every: int = 50, progress=None) -> tuple[Scene, list[dict]]:
    """Run ``iters`` Adam iterations on the raw channels of every group.

    Sky positions stay frozen; gradients are the raw (unnormalized) lift.
    """
    schedule = schedule or DescentSchedule()
    scene = scene0.copy()
    names = scene.group_names()
    m_state = {n: np.zeros_like(scene.group_arrays()[n]) for n in names}
    v_state = {n: np.zeros_like(scene.group_arrays()[n]) for n in names}
    log = []
    for it in range(iters):
        lifted = lift(scene, source_views, net, normalize=False, background=background)
        lr = schedule.lr(it)
        for name, arr in scene.group_arrays().items():
            updated = adam_step_arrays(arr, lifted.group(name), m_state[name],
                                       v_state[name], it + 1, lr)
            scene.set_group(name, updated)
        if it % log_every == 0 or it == iters - 1:
            entry = {"iteration": it, "lr": lr,
                     "grad_maxabs": float(lifted.channel_maxabs.max())}
            log.append(entry)
            if progress is not None:
                progress(entry)
    return scene, log


def compare(scene0: Scene, frames: FrameSet, model: ReconModel,
            baseline_iters=(24, 100, 500), background=None,
            recon_steps: int | None = None, seed: int = 0) -> dict:
    """Learned optimizer vs gradient descent at several iteration budgets:
    held-out PSNR/SSIM and wall time per method."""
    sources = frames.sources()
    targets = frames.targets()
    report: dict = {"methods": []}

    t0 = time.perf_counter()
    recon_scene, _ = reconstruct(scene0, sources, model, steps=recon_steps, seed=seed,
                                 background=background)
    wall = time.perf_counter() - t0
    steps_used = recon_steps if recon_steps is not None else model.schedule.steps
    metrics = evaluate_views(recon_scene, model.decode, targets, background)
    report["methods"].append({"name": "learned", "iterations": steps_used,
                              "psnr": metrics["psnr"], "ssim": metrics["ssim"],
                              "wall_s": wall})

    for iters in baseline_iters:
        t0 = time.perf_counter()
        opt_scene, _ = optimize(scene0, sources, model.decode, iters, background=background)
        wall = time.perf_counter() - t0
        metrics = evaluate_views(opt_scene, model.decode, targets, background)
        report["methods"].append({"name": f"descent_{iters}", "iterations": iters,
                                  "psnr": metrics["psnr"], "ssim": metrics["ssim"],
                                  "wall_s": wall})

    init_metrics = evaluate_views(scene0, model.decode, targets, background)
    report["initialization"] = {"psnr": init_metrics["psnr"], "ssim": init_metrics["ssim"]}
    return report
