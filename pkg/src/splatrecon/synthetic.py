"""Procedural driving-style scenes with exact ground truth.

A ground plane, roadside boxes, spheres, and billboard facades plus moving
box actors and a distant sky shell, all represented directly as splats and
rendered by this package's own renderer, so reconstruction quality measures
optimizer behavior rather than representation mismatch. The scaffold is a
noisy subsample of the true surface points.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .geom import (
    Camera,
    CameraIntrinsics,
    RigidPose,
    quat_between,
    quat_from_axis_angle,
    quat_from_matrix,
)
from .scene import (
    COLOR,
    OPACITY,
    PHYSICAL_CHANNELS,
    POS,
    QUAT,
    SCALE,
    Actor,
    Scene,
    init_sky,
    logit,
)
from .views import FrameSet, View, split_extrapolation  # noqa: F401 (re-export)

# camera axes in world coordinates for a forward (+x) driving view, z up
_R_FORWARD = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass
class SceneSpec:
    seed: int = 0
    frame_count: int = 32
    frame_spacing: float = 0.5          # meters of forward travel per frame
    image_width: int = 128
    image_height: int = 128
    focal: float = 110.0
    cam_height: float = 1.5
    near: float = 2.0                   # generous near plane; splats closer than
                                        # this project to degenerate footprints
    extent: float = 34.0                # forward length of the populated strip
    ground_points: int = 2400
    n_boxes: int = 4
    n_spheres: int = 4
    n_billboards: int = 4
    n_actors: int = 2
    actor_points: int = 260
    sky_radius: float = 300.0
    sky_rows: int = 12
    sky_cols: int = 48
    scaffold_noise: float = 0.02        # meters, sigma of position jitter
    scaffold_dropout: float = 0.35      # fraction of surface points dropped
    color_noise: float = 0.06

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    gt: Scene                    # physical channels only (C = 14)
    frames: FrameSet             # truth images rendered from gt, no split yet
    scaffold_positions: np.ndarray
    scaffold_labels: np.ndarray
    actor_tracks: dict[int, tuple[list[RigidPose], np.ndarray]]
    scaffold_src: np.ndarray     # row in the gt group each scaffold point came from
    cameras: list[Camera] = field(default_factory=list)


def _raw14(pos, scale, quat, color, opacity) -> np.ndarray:
    """Encode explicit attributes into the raw channel layout (zero decode
    net reproduces them exactly)."""
    m = pos.shape[0]
    cloud = np.zeros((m, PHYSICAL_CHANNELS), dtype=np.float32)
    cloud[:, POS] = pos
    cloud[:, SCALE] = np.log(scale)
    cloud[:, QUAT] = quat
    eps = 1e-4
    cloud[:, COLOR] = np.log(np.clip(color, eps, 1 - eps) / (1 - np.clip(color, eps, 1 - eps)))
    cloud[:, OPACITY] = logit(opacity)
    return cloud


def _surface_grid(rng, x0, x1, y0, y1, n, z):
    xs = rng.uniform(x0, x1, n)
    ys = rng.uniform(y0, y1, n)
    return np.column_stack([xs, ys, np.full(n, z)])


def _flat_quat_for_normal(normal) -> np.ndarray:
    # splats are thin along local z; rotate local z onto the surface normal
    return quat_between(np.array([0.0, 0.0, 1.0]), np.asarray(normal, dtype=np.float64))


def _ground(spec: SceneSpec, rng) -> tuple[np.ndarray, ...]:
    pts = _surface_grid(rng, -4.0, spec.extent, -12.0, 12.0, spec.ground_points, 0.0)
    road = np.abs(pts[:, 1]) < 3.5
    base = np.where(road[:, None], np.array([0.26, 0.26, 0.28]), np.array([0.22, 0.34, 0.18]))
    color = np.clip(base + rng.normal(0, spec.color_noise, (pts.shape[0], 3)), 0.02, 0.98)
    spacing = np.sqrt((spec.extent + 4.0) * 24.0 / spec.ground_points)
    scale = np.tile([spacing * 0.8, spacing * 0.8, 0.02], (pts.shape[0], 1))
    quat = np.tile([1.0, 0, 0, 0], (pts.shape[0], 1))
    return pts, scale, quat, color


def _box_surface(rng, center, size, n, color_base, color_noise):
    """Points on the four side faces and top of an axis-aligned box."""
    half = size / 2.0
    areas = np.array([size[1] * size[2], size[1] * size[2],
                      size[0] * size[2], size[0] * size[2], size[0] * size[1]])
    counts = np.maximum(1, (n * areas / areas.sum()).astype(int))
    pts, quats = [], []
    normals = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1)]
    for (nx, ny, nz), cnt in zip(normals, counts):
        u = rng.uniform(-1, 1, cnt)
        v = rng.uniform(-1, 1, cnt)
        if nx != 0:
            local = np.column_stack([np.full(cnt, nx * half[0]), u * half[1], v * half[2]])
        elif ny != 0:
            local = np.column_stack([u * half[0], np.full(cnt, ny * half[1]), v * half[2]])
        else:
            local = np.column_stack([u * half[0], v * half[1], np.full(cnt, half[2])])
        pts.append(center + local)
        quats.append(np.tile(_flat_quat_for_normal((nx, ny, nz)), (cnt, 1)))
    pts = np.concatenate(pts)
    quats = np.concatenate(quats)
    spacing = float(np.sqrt(2 * areas.sum() / max(n, 1)))
    scale = np.tile([spacing, spacing, 0.02], (pts.shape[0], 1))
    color = np.clip(color_base + rng.normal(0, color_noise, (pts.shape[0], 3)), 0.02, 0.98)
    return pts, scale, quats, color


def _sphere_surface(rng, center, radius, n, color_base, color_noise):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = center + radius * d
    quats = np.array([_flat_quat_for_normal(v) for v in d])
    spacing = radius * np.sqrt(4 * np.pi / n) * 1.3
    scale = np.tile([spacing, spacing, 0.02], (n, 1))
    color = np.clip(color_base + rng.normal(0, color_noise, (n, 3)), 0.02, 0.98)
    return pts, scale, quats, color


def _billboard(rng, x_span, y_pos, height, n, color_base, color_noise):
    xs = rng.uniform(x_span[0], x_span[1], n)
    zs = rng.uniform(0.0, height, n)
    pts = np.column_stack([xs, np.full(n, y_pos), zs])
    normal = (0.0, -1.0, 0.0) if y_pos > 0 else (0.0, 1.0, 0.0)
    quats = np.tile(_flat_quat_for_normal(normal), (n, 1))
    spacing = np.sqrt((x_span[1] - x_span[0]) * height / n) * 1.2
    scale = np.tile([spacing, spacing, 0.02], (n, 1))
    # window-like blocks: modulate brightness on a coarse grid
    blocks = ((np.floor(xs / 1.5) + np.floor(zs / 1.2)) % 2).astype(float)
    color = color_base * (0.72 + 0.4 * blocks[:, None])
    color = np.clip(color + rng.normal(0, color_noise, (n, 3)), 0.02, 0.98)
    return pts, scale, quats, color


def _sky_ground_truth(spec: SceneSpec, center, rng) -> np.ndarray:
    """Sky band on the same equirectangular grid the reconstruction uses,
    colored with a latitude gradient."""
    cloud14 = init_sky(spec.sky_radius, spec.sky_rows, spec.sky_cols,
                       channels=PHYSICAL_CHANNELS, rng=rng, center=center)
    z = (cloud14[:, 2] - center[2]) / spec.sky_radius
    tt = np.clip((z + 0.26) / 0.76, 0, 1)[:, None]
    color = (1 - tt) * np.array([0.82, 0.84, 0.9]) + tt * np.array([0.35, 0.52, 0.86])
    color = np.clip(color + rng.normal(0, 0.01, color.shape), 0.02, 0.98)
    eps = 1e-4
    cloud14[:, COLOR] = np.log(color / (1 - color))
    cloud14[:, OPACITY] = logit(0.995)
    # widen slightly so the dome closes without pinholes
    cloud14[:, SCALE] += np.log(1.6)
    return cloud14


def _actor_canonical(rng, spec) -> tuple[np.ndarray, np.ndarray]:
    size = np.array([4.2, 1.8, 1.5]) * rng.uniform(0.85, 1.15)
    base = rng.uniform(0.15, 0.85, 3)
    pts, scale, quats, color = _box_surface(rng, np.array([0.0, 0.0, size[2] / 2]),
                                            size, spec.actor_points, base, spec.color_noise)
    return _raw14(pts, scale, quats, color, 0.97), size


def _actor_track(rng, spec) -> list[RigidPose]:
    lane = rng.choice([-1.75, 1.75])
    x0 = rng.uniform(6.0, spec.extent - 8.0)
    speed = rng.uniform(0.25, 0.7) * rng.choice([-1.0, 1.0])
    turn = rng.uniform(-0.004, 0.004)
    track = []
    for f in range(spec.frame_count):
        yaw = turn * f
        pos = np.array([x0 + speed * f, lane + 0.5 * turn * f * f, 0.0])
        track.append(RigidPose(quat_from_axis_angle([0, 0, 1], yaw), pos))
    return track


def generate(spec: SceneSpec) -> SyntheticScene:
    """Deterministically build ground truth, truth images, and the scaffold."""
    rng = np.random.default_rng(spec.seed)

    parts = [_ground(spec, rng)]
    for _ in range(spec.n_billboards):
        side = rng.choice([-1.0, 1.0])
        x0 = rng.uniform(0.0, spec.extent - 8.0)
        parts.append(_billboard(rng, (x0, x0 + rng.uniform(5.0, 9.0)),
                                side * rng.uniform(7.0, 11.0), rng.uniform(4.0, 8.0),
                                220, rng.uniform(0.25, 0.8, 3), spec.color_noise))
    for _ in range(spec.n_boxes):
        center = np.array([rng.uniform(2.0, spec.extent), rng.choice([-1, 1]) * rng.uniform(4.5, 6.0), 0.0])
        size = rng.uniform([1.2, 1.2, 0.8], [2.6, 2.6, 2.2])
        center[2] = size[2] / 2
        parts.append(_box_surface(rng, center, size, 160, rng.uniform(0.2, 0.85, 3), spec.color_noise))
    for _ in range(spec.n_spheres):
        center = np.array([rng.uniform(2.0, spec.extent), rng.choice([-1, 1]) * rng.uniform(4.5, 7.0), 0.0])
        radius = rng.uniform(0.7, 1.4)
        center[2] = radius * 0.9
        parts.append(_sphere_surface(rng, center, radius, 140,
                                     np.array([0.15, 0.4, 0.12]) + rng.uniform(-0.05, 0.1, 3),
                                     spec.color_noise))

    bg_pts = np.concatenate([p[0] for p in parts])
    bg_cloud = np.concatenate([
        _raw14(p[0], p[1], p[2], p[3], 0.97) for p in parts
    ])

    sky_center = np.array([spec.extent / 2.0, 0.0, 0.0])
    gt_sky = _sky_ground_truth(spec, sky_center, rng)

    actors = []
    actor_tracks: dict[int, tuple[list[RigidPose], np.ndarray]] = {}
    for actor_id in range(spec.n_actors):
        cloud, size = _actor_canonical(rng, spec)
        track = _actor_track(rng, spec)
        actors.append(Actor(actor_id, cloud, track, size))
        actor_tracks[actor_id] = (track, size)

    gt = Scene(background=bg_cloud, actors=actors, sky=gt_sky,
               frame_count=spec.frame_count, sky_center=sky_center,
               sky_radius=spec.sky_radius)

    # driving camera path along +x
    intr = CameraIntrinsics(spec.focal, spec.focal, spec.image_width / 2.0,
                            spec.image_height / 2.0, spec.image_width, spec.image_height)
    quat_cam = quat_from_matrix(_R_FORWARD)
    cameras = []
    for f in range(spec.frame_count):
        center = np.array([f * spec.frame_spacing, 0.0, spec.cam_height])
        pose = RigidPose(quat_cam, -_R_FORWARD @ center)
        cameras.append(Camera(intr, pose, near=spec.near))

    from .evaluation import render_view  # deferred to avoid import cycle at module load

    zero_net = _ZeroDecode()
    views = []
    for f, cam in enumerate(cameras):
        img = render_view(gt, zero_net, View(cam, None, f))
        views.append(View(cam, img, f))
    frames = FrameSet(views)

    # scaffold: noisy subsample of true surfaces (actor points stay canonical)
    keep_bg = rng.uniform(size=bg_pts.shape[0]) >= spec.scaffold_dropout
    positions = [bg_pts[keep_bg]]
    labels = [np.full(int(keep_bg.sum()), -1, dtype=np.int32)]
    src_rows = [np.nonzero(keep_bg)[0]]
    for a in actors:
        apts = a.cloud[:, POS]
        keep = rng.uniform(size=apts.shape[0]) >= spec.scaffold_dropout
        positions.append(apts[keep])
        labels.append(np.full(int(keep.sum()), a.actor_id, dtype=np.int32))
        src_rows.append(np.nonzero(keep)[0])
    scaffold_positions = np.concatenate(positions)
    if spec.scaffold_noise > 0:
        scaffold_positions = scaffold_positions + rng.normal(0, spec.scaffold_noise,
                                                             scaffold_positions.shape)
    return SyntheticScene(
        spec=spec,
        gt=gt,
        frames=frames,
        scaffold_positions=scaffold_positions.astype(np.float64),
        scaffold_labels=np.concatenate(labels),
        actor_tracks=actor_tracks,
        scaffold_src=np.concatenate(src_rows),
        cameras=cameras,
    )


class _ZeroDecode:
    """Zero decode net for physical-channel-only clouds (identity decode)."""

    def __init__(self, channels: int = PHYSICAL_CHANNELS):
        from .autodiff import Tensor

        self.w = Tensor(np.zeros((channels, PHYSICAL_CHANNELS), dtype=np.float32))
        self.b = Tensor(np.zeros(PHYSICAL_CHANNELS, dtype=np.float32))


def zero_decode(channels: int = PHYSICAL_CHANNELS) -> _ZeroDecode:
    return _ZeroDecode(channels)


def inject_gt_appearance(scene0: Scene, synth: SyntheticScene) -> Scene:
    """Copy true scale/orientation/color/opacity channels onto an initialized
    scene (positions keep the scaffold's); the sky copies wholesale since the
    grids coincide. With zero noise and dropout this makes the initialization
    reproduce the truth up to activation round-trip."""
    out = scene0.copy()
    labels = synth.scaffold_labels
    src = synth.scaffold_src
    appearance = slice(3, PHYSICAL_CHANNELS)
    out.background[:, appearance] = synth.gt.background[src[labels == -1]][:, appearance]
    for actor in out.actors:
        gt_actor = next(a for a in synth.gt.actors if a.actor_id == actor.actor_id)
        rows = src[labels == actor.actor_id]
        actor.cloud[:, appearance] = gt_actor.cloud[rows][:, appearance]
    if out.sky.shape[0] == synth.gt.sky.shape[0]:
        out.sky[:, :PHYSICAL_CHANNELS] = synth.gt.sky
    return out
