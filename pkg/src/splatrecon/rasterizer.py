"""Differentiable tile-based splatting of anisotropic 3D Gaussians.

Forward: project each Gaussian to an elliptical 2D footprint, bin footprints
to 16x16 pixel tiles, then alpha-composite front to back per pixel.
Backward: analytic vector-Jacobian product through compositing, the
exponential kernel, the projection Jacobian, and covariance assembly,
yielding gradients for every Gaussian attribute.

Footprints are truncated only by the alpha floor (1/255): the tile binning
rectangle is the exact bounding box of the alpha-floor contour, so the tiled
result matches a renderer that evaluates every splat at every pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import ALPHA_MIN, TILE
from .geom import Camera


class StaleForwardState(Exception):
    """Backward was called with buffers that do not match its forward pass."""


@dataclass
class ExplicitGaussians:
    """Decoded splat attributes; one row per Gaussian."""

    pos: np.ndarray       # (M, 3) meters
    scale: np.ndarray     # (M, 3) meters, > 0
    quat: np.ndarray      # (M, 4) unit (w, x, y, z)
    color: np.ndarray     # (M, 3) in [0, 1]
    opacity: np.ndarray   # (M,) in (0, 1)

    @property
    def count(self) -> int:
        return self.pos.shape[0]

    def validate(self):
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")
        norms = np.linalg.norm(self.quat, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("quaternions must be unit within 1e-6")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("colors must lie in [0, 1]")
        if np.any(self.opacity <= 0) or np.any(self.opacity >= 1):
            raise ValueError("opacities must lie in (0, 1)")

    def astype(self, dtype) -> "ExplicitGaussians":
        return ExplicitGaussians(*(a.astype(dtype) for a in
                                   (self.pos, self.scale, self.quat, self.color, self.opacity)))


@dataclass
class Gradients:
    pos: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    color: np.ndarray
    opacity: np.ndarray


@dataclass
class _SavedForward:
    vis_idx: np.ndarray      # original indices of visible splats, depth order
    mean2d: np.ndarray       # (K, 2)
    conic: np.ndarray        # (K, 3) inverse 2D covariance (a, b, c)
    cov2d: np.ndarray        # (K, 3) dilated 2D covariance (a, b, c)
    color: np.ndarray        # (K, 3)
    opa: np.ndarray          # (K,)
    log_opa: np.ndarray      # (K,)
    p_cam: np.ndarray        # (K, 3)
    entry_splat: np.ndarray  # (E,) int32, kernel-local splat index per tile entry
    tile_offsets: np.ndarray
    width: int
    height: int
    background: np.ndarray
    count: int


@dataclass
class RenderOutput:
    image: np.ndarray               # (H, W, 3)
    transmittance: np.ndarray       # (H, W) final T per pixel
    contrib_count: np.ndarray       # (H, W) splats composited per pixel
    saved: _SavedForward = field(repr=False, default=None)
    last_pos: np.ndarray = field(repr=False, default=None)


COV_DILATION = 0.3  # px^2 low-pass added to every projected covariance


def _quat_to_matrices(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (K, 4) unit quaternions."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3), dtype=q.dtype)
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def _project_arrays(g: ExplicitGaussians, cam: Camera):
    """Vectorized projection of all Gaussians; returns per-splat 2D data.

    Everything is computed in float64; callers decide the storage dtype.
    """
    k = cam.intrinsics
    r_wc = cam.pose.rotation_matrix()
    pos = g.pos.astype(np.float64)
    p_cam = pos @ r_wc.T + cam.pose.trans

    qn = g.quat.astype(np.float64)
    qn = qn / np.linalg.norm(qn, axis=1, keepdims=True)
    rot = _quat_to_matrices(qn)
    s2 = g.scale.astype(np.float64) ** 2
    # world covariance V = R diag(s^2) R^T
    v = np.einsum("kij,kj,klj->kil", rot, s2, rot)

    z = p_cam[:, 2]
    zsafe = np.where(z > 1e-9, z, 1.0)
    jac = np.zeros((g.count, 2, 3))
    jac[:, 0, 0] = k.fx / zsafe
    jac[:, 0, 2] = -k.fx * p_cam[:, 0] / zsafe**2
    jac[:, 1, 1] = k.fy / zsafe
    jac[:, 1, 2] = -k.fy * p_cam[:, 1] / zsafe**2
    m = jac @ r_wc  # (K, 2, 3)
    cov = np.einsum("kij,kjl,kml->kim", m, v, m)
    sa = cov[:, 0, 0] + COV_DILATION
    sb = cov[:, 0, 1]
    sc = cov[:, 1, 1] + COV_DILATION

    det = sa * sc - sb * sb
    conic = np.stack([sc / det, -sb / det, sa / det], axis=1)

    mean2d = np.stack(
        [k.fx * p_cam[:, 0] / zsafe + k.cx, k.fy * p_cam[:, 1] / zsafe + k.cy], axis=1
    )

    opa = g.opacity.astype(np.float64)
    # bounding box of the alpha-floor contour (plus margin), per axis
    m2 = 2.0 * np.log(np.maximum(opa, 1e-30) / ALPHA_MIN) + 1e-3
    return p_cam, mean2d, np.stack([sa, sb, sc], axis=1), conic, opa, m2, rot, v, m


def _visible_and_rects(p_cam, mean2d, cov, m2, near, width, height):
    z = p_cam[:, 2]
    ok = (z >= near) & (m2 > 0)
    half_x = np.sqrt(np.maximum(m2, 0) * cov[:, 0])
    half_y = np.sqrt(np.maximum(m2, 0) * cov[:, 2])
    x0 = np.floor(mean2d[:, 0] - half_x).astype(np.int64) - 1
    x1 = np.ceil(mean2d[:, 0] + half_x).astype(np.int64) + 1
    y0 = np.floor(mean2d[:, 1] - half_y).astype(np.int64) - 1
    y1 = np.ceil(mean2d[:, 1] + half_y).astype(np.int64) + 1
    ok &= (x1 >= 0) & (x0 <= width - 1) & (y1 >= 0) & (y0 <= height - 1)
    x0 = np.clip(x0, 0, width - 1)
    x1 = np.clip(x1, 0, width - 1)
    y0 = np.clip(y0, 0, height - 1)
    y1 = np.clip(y1, 0, height - 1)
    rects = np.stack([x0 // TILE, x1 // TILE, y0 // TILE, y1 // TILE], axis=1)
    return ok, rects


def render(g: ExplicitGaussians, cam: Camera, background=None) -> RenderOutput:
    """Render Gaussians through a pinhole camera with front-to-back blending."""
    k = cam.intrinsics
    dtype = g.pos.dtype
    if background is None:
        background = np.zeros(3, dtype=dtype)
    background = np.asarray(background, dtype=dtype)

    p_cam, mean2d, cov, conic, opa, m2, _, _, _ = _project_arrays(g, cam)
    ok, rects = _visible_and_rects(p_cam, mean2d, cov, m2, cam.near, k.width, k.height)

    vis = np.nonzero(ok)[0]
    depth = p_cam[vis, 2]
    order = np.lexsort((vis, depth))  # ascending depth, ties by original index
    vis = vis[order]

    saved = _SavedForward(
        vis_idx=vis,
        mean2d=mean2d[vis].astype(dtype),
        conic=conic[vis].astype(dtype),
        cov2d=cov[vis].astype(dtype),
        color=g.color[vis].astype(dtype),
        opa=opa[vis].astype(dtype),
        log_opa=np.log(opa[vis]).astype(dtype),
        p_cam=p_cam[vis],
        entry_splat=None,
        tile_offsets=None,
        width=k.width,
        height=k.height,
        background=background,
        count=g.count,
    )

    ntx = (k.width + TILE - 1) // TILE
    nty = (k.height + TILE - 1) // TILE
    ntiles = ntx * nty
    vrects = np.ascontiguousarray(rects[vis])
    counts = np.zeros(ntiles, dtype=np.int64)
    _kernels.count_tile_entries(vrects, ntx, counts)
    offsets = np.zeros(ntiles + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    entry_splat = np.zeros(offsets[-1], dtype=np.int32)
    cursor = np.zeros(ntiles, dtype=np.int64)
    _kernels.fill_tile_entries(vrects, ntx, offsets, cursor, entry_splat)
    saved.entry_splat = entry_splat
    saved.tile_offsets = offsets

    img = np.zeros((k.height, k.width, 3), dtype=dtype)
    t_out = np.ones((k.height, k.width), dtype=dtype)
    n_contrib = np.zeros((k.height, k.width), dtype=np.int32)
    last_pos = np.full((k.height, k.width), -1, dtype=np.int64)
    _kernels.composite_forward(
        saved.mean2d, saved.conic, saved.color, saved.opa, saved.log_opa,
        entry_splat, offsets, k.width, k.height, background,
        img, t_out, n_contrib, last_pos,
    )
    return RenderOutput(image=img, transmittance=t_out, contrib_count=n_contrib,
                        saved=saved, last_pos=last_pos)


def render_backward(g: ExplicitGaussians, cam: Camera, out: RenderOutput,
                    dl_dimage: np.ndarray) -> Gradients:
    """Gradients of a scalar loss w.r.t. every Gaussian attribute.

    ``out`` must come from ``render`` on identical inputs; compositing is
    recomputed in reverse per pixel from the retained tile lists.
    """
    s = out.saved
    if s is None:
        raise StaleForwardState("render output carries no saved forward state")
    if dl_dimage.shape != (s.height, s.width, 3):
        raise StaleForwardState(f"dL/dImage shape {dl_dimage.shape} != {(s.height, s.width, 3)}")
    if s.count != g.count:
        raise StaleForwardState("gaussian count changed since forward")

    partials = np.zeros((s.entry_splat.shape[0], 9), dtype=np.float64)
    _kernels.composite_backward(
        s.mean2d, s.conic, s.color, s.opa, s.log_opa,
        s.entry_splat, s.tile_offsets, s.width, s.height, s.background,
        out.transmittance, out.last_pos, dl_dimage, partials,
    )
    acc = np.zeros((s.vis_idx.shape[0], 9), dtype=np.float64)
    _kernels.reduce_entry_partials(s.entry_splat, partials, acc)

    g_mean = acc[:, 0:2]
    g_conic = acc[:, 2:5]
    g_color = acc[:, 5:8]
    g_opa_direct = acc[:, 8]

    vis = s.vis_idx
    k = cam.intrinsics
    r_wc = cam.pose.rotation_matrix()

    # recompute projection intermediates for the visible subset (float64)
    sub = ExplicitGaussians(g.pos[vis], g.scale[vis], g.quat[vis], g.color[vis], g.opacity[vis])
    p_cam, _, cov_pk, _, _, _, rot, v_world, m_jw = _project_arrays(sub, cam)

    # conic = inv(cov): dL/dcov = -conic . dL/dconic_full . conic
    q_full = _sym_full(np.stack([s.conic[:, 0], s.conic[:, 1], s.conic[:, 2]], axis=1).astype(np.float64))
    gq_full = _sym_full_from_packed_grad(g_conic)
    g_cov_full = -np.einsum("kij,kjl,klm->kim", q_full, gq_full, q_full)
    # add the direct mean2d gradient and chain everything to 3D quantities
    return _chain_to_3d(g, vis, p_cam, rot, v_world, m_jw, r_wc, k,
                        g_cov_full, g_mean, g_color, g_opa_direct)


def _sym_full(packed: np.ndarray) -> np.ndarray:
    out = np.empty((packed.shape[0], 2, 2), dtype=packed.dtype)
    out[:, 0, 0] = packed[:, 0]
    out[:, 0, 1] = packed[:, 1]
    out[:, 1, 0] = packed[:, 1]
    out[:, 1, 1] = packed[:, 2]
    return out


def _sym_full_from_packed_grad(packed_grad: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. (a, b, c) scalars -> gradient w.r.t. the full matrix."""
    out = np.empty((packed_grad.shape[0], 2, 2), dtype=packed_grad.dtype)
    out[:, 0, 0] = packed_grad[:, 0]
    out[:, 0, 1] = 0.5 * packed_grad[:, 1]
    out[:, 1, 0] = 0.5 * packed_grad[:, 1]
    out[:, 1, 1] = packed_grad[:, 2]
    return out


def _chain_to_3d(g, vis, p_cam, rot, v_world, m_jw, r_wc, intr,
                 g_cov_full, g_mean, g_color, g_opa_direct) -> Gradients:
    fx, fy = intr.fx, intr.fy
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z

    # cov = M V M^T (+ const): dM = 2 G M V, dV = M^T G M
    g_m = 2.0 * np.einsum("kij,kjl,klm->kim", g_cov_full, m_jw, v_world)
    g_v = np.einsum("kji,kjl,klm->kim", m_jw, g_cov_full, m_jw)

    # M = J R_wc: dJ = dM R_wc^T
    g_j = g_m @ r_wc.T

    # J entries depend on camera-space position
    g_pc = np.zeros_like(p_cam)
    g_pc[:, 0] = g_j[:, 0, 2] * (-fx * inv_z2)
    g_pc[:, 1] = g_j[:, 1, 2] * (-fy * inv_z2)
    g_pc[:, 2] = (g_j[:, 0, 0] * (-fx * inv_z2) + g_j[:, 0, 2] * (2 * fx * x * inv_z2 * inv_z)
                  + g_j[:, 1, 1] * (-fy * inv_z2) + g_j[:, 1, 2] * (2 * fy * y * inv_z2 * inv_z))
    # pinhole mean: u = fx x/z + cx, v = fy y/z + cy
    g_pc[:, 0] += g_mean[:, 0] * fx * inv_z
    g_pc[:, 1] += g_mean[:, 1] * fy * inv_z
    g_pc[:, 2] += -(g_mean[:, 0] * fx * x + g_mean[:, 1] * fy * y) * inv_z2

    g_pos_vis = g_pc @ r_wc  # dL/dmu = R_wc^T dL/dp, rows: (R^T g)^T = g R

    # V = R diag(s^2) R^T
    s = g.scale[vis].astype(np.float64)
    rtar = np.einsum("kji,kjl,klm->kim", rot, g_v, rot)  # R^T A R
    g_scale_vis = 2.0 * s * np.einsum("kii->ki", rtar)
    g_rot = 2.0 * np.einsum("kij,kjl->kil", g_v, rot) * (s * s)[:, None, :]

    # rotation -> unit quaternion -> raw quaternion (normalization chain)
    q_raw = g.quat[vis].astype(np.float64)
    nrm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    qh = q_raw / nrm
    g_qhat = _rotation_quat_vjp(qh, g_rot)
    g_quat_vis = (g_qhat - qh * np.sum(g_qhat * qh, axis=1, keepdims=True)) / nrm

    mcount = g.count
    dtype = g.pos.dtype
    grads = Gradients(
        pos=np.zeros((mcount, 3), dtype=dtype),
        scale=np.zeros((mcount, 3), dtype=dtype),
        quat=np.zeros((mcount, 4), dtype=dtype),
        color=np.zeros((mcount, 3), dtype=dtype),
        opacity=np.zeros(mcount, dtype=dtype),
    )
    grads.pos[vis] = g_pos_vis.astype(dtype)
    grads.scale[vis] = g_scale_vis.astype(dtype)
    grads.quat[vis] = g_quat_vis.astype(dtype)
    grads.color[vis] = g_color.astype(dtype)
    grads.opacity[vis] = g_opa_direct.astype(dtype)
    return grads


def _rotation_quat_vjp(qh: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Pull a gradient on R(q) back to the unit quaternion q = (w, x, y, z)."""
    w, x, y, z = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    zero = np.zeros_like(w)
    # dR/dw, dR/dx, dR/dy, dR/dz, each (K, 3, 3)
    dw = 2.0 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1),
    ], axis=1)
    dx = 2.0 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1),
    ], axis=1)
    dy = 2.0 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1),
    ], axis=1)
    dz = 2.0 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1),
    ], axis=1)
    out = np.empty_like(qh)
    out[:, 0] = np.einsum("kij,kij->k", g_rot, dw)
    out[:, 1] = np.einsum("kij,kij->k", g_rot, dx)
    out[:, 2] = np.einsum("kij,kij->k", g_rot, dy)
    out[:, 3] = np.einsum("kij,kij->k", g_rot, dz)
    return out
