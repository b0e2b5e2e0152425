"""Brute-force splat renderer used as an independent check on the tiled path.

Every splat is evaluated at every pixel with no tiling, no footprint
bounding boxes, and no spatial acceleration; only the compositing semantics
themselves (depth order, the 1/255 alpha floor, the 0.99 alpha clamp, and
the 1e-4 transmittance cutoff) are shared with the production renderer.
Deliberately simple and slow; keep it free of optimizations.
"""
from __future__ import annotations

import numpy as np

from .geom import Camera
from .rasterizer import ExplicitGaussians


def render_reference(g: ExplicitGaussians, cam: Camera, background=None) -> np.ndarray:
    intr = cam.intrinsics
    if background is None:
        background = np.zeros(3)
    background = np.asarray(background, dtype=np.float64)

    rot_cam = cam.pose.rotation_matrix()
    splats = []
    for i in range(g.count):
        p = rot_cam @ g.pos[i].astype(np.float64) + cam.pose.trans
        if p[2] < cam.near:
            continue
        q = g.quat[i].astype(np.float64)
        q = q / np.linalg.norm(q)
        w, x, y, z = q
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        cov3 = rot @ np.diag(g.scale[i].astype(np.float64) ** 2) @ rot.T
        jac = np.array(
            [
                [intr.fx / p[2], 0.0, -intr.fx * p[0] / p[2] ** 2],
                [0.0, intr.fy / p[2], -intr.fy * p[1] / p[2] ** 2],
            ]
        )
        m = jac @ rot_cam
        cov2 = m @ cov3 @ m.T + 0.3 * np.eye(2)
        mean = np.array(
            [intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy]
        )
        splats.append((p[2], i, mean, np.linalg.inv(cov2),
                       g.color[i].astype(np.float64), float(g.opacity[i])))
    splats.sort(key=lambda s: (s[0], s[1]))

    img = np.zeros((intr.height, intr.width, 3))
    for py in range(intr.height):
        for px in range(intr.width):
            center = np.array([px + 0.5, py + 0.5])
            t = 1.0
            acc = np.zeros(3)
            for _, _, mean, conic, color, opa in splats:
                d = center - mean
                power = -0.5 * d @ conic @ d
                if power > 0.0:
                    continue
                alpha = min(0.99, opa * np.exp(power))
                if alpha < 1.0 / 255.0:
                    continue
                acc += color * alpha * t
                t *= 1.0 - alpha
                if t < 1.0e-4:
                    break
            img[py, px] = acc + background * t
    return img
