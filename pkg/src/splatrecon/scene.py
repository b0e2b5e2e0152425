"""Neural-Gaussian scene state: feature clouds, the decode network, scene
decomposition into background / rigid actors / sky shell, and initialization
from a geometry scaffold.

Channel layout of a feature cloud row (C channels, first 14 physical):
  [0:3)  position, meters, raw
  [3:6)  scale, log-meters (exp-activated on decode)
  [6:10) orientation quaternion, raw (normalized on decode)
  [10:13) color logits (sigmoid on decode)
  [13]   opacity logit (sigmoid on decode)
  [14:C) latent features
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor
from .geom import RigidPose, quat_left_matrix
from .rasterizer import ExplicitGaussians

DEFAULT_CHANNELS = 46
PHYSICAL_CHANNELS = 14
POS = slice(0, 3)
SCALE = slice(3, 6)
QUAT = slice(6, 10)
COLOR = slice(10, 13)
OPACITY = 13

SCALE_MIN = 1e-6
SCALE_MAX = 1e3
D3_FLOOR = 1e-4  # meters; duplicate scaffold points otherwise give zero-volume splats


class DegenerateQuaternion(Exception):
    pass


class TooFewPoints(Exception):
    pass


class FrameOutOfRange(Exception):
    pass


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


class DecodeNet:
    """Single linear layer with tanh, applied as a residual on the physical
    channels: raw14 = h[:, :14] + tanh(h @ W + b)."""

    def __init__(self, channels: int = DEFAULT_CHANNELS, dtype=np.float32):
        self.channels = channels
        self.w = Tensor(np.zeros((channels, PHYSICAL_CHANNELS), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(PHYSICAL_CHANNELS, dtype=dtype), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


def decode_tensors(h: Tensor, net: DecodeNet) -> dict[str, Tensor]:
    """Differentiable decode of raw channels into physical splat attributes."""
    raw = h[:, 0:PHYSICAL_CHANNELS] + ad.tanh(ad.matmul(h, net.w) + net.b)
    qraw = raw[:, QUAT]
    qnorm = np.linalg.norm(qraw.data, axis=1)
    if np.any(qnorm < 1e-12):
        raise DegenerateQuaternion("quaternion channels collapsed to zero")
    return {
        "pos": raw[:, POS],
        "scale": ad.clamp(ad.texp(raw[:, SCALE]), SCALE_MIN, SCALE_MAX),
        "quat": ad.normalize_rows(qraw),
        "color": ad.sigmoid(raw[:, COLOR]),
        "opacity": ad.sigmoid(raw[:, OPACITY]),
    }


def decode(cloud: np.ndarray, net: DecodeNet) -> ExplicitGaussians:
    d = decode_tensors(Tensor(cloud), net)
    return ExplicitGaussians(d["pos"].data, d["scale"].data, d["quat"].data,
                             d["color"].data, d["opacity"].data)


@dataclass
class Actor:
    actor_id: int
    cloud: np.ndarray                 # (Ma, C) canonical-frame channels
    track: list[RigidPose]            # canonical-to-world pose per frame
    box: np.ndarray                   # (3,) extents, meters


@dataclass
class Scene:
    background: np.ndarray            # (Mb, C)
    actors: list[Actor]
    sky: np.ndarray                   # (Ms, C), positions on a distant sphere
    frame_count: int
    sky_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sky_radius: float = 0.0

    def __post_init__(self):
        for a in self.actors:
            if len(a.track) != self.frame_count:
                raise ValueError(f"actor {a.actor_id} track length {len(a.track)} != frames {self.frame_count}")

    @property
    def channels(self) -> int:
        return self.background.shape[1]

    def group_names(self) -> list[str]:
        return ["background"] + [f"actor_{a.actor_id}" for a in self.actors] + ["sky"]

    def group_arrays(self) -> dict[str, np.ndarray]:
        out = {"background": self.background}
        for a in self.actors:
            out[f"actor_{a.actor_id}"] = a.cloud
        out["sky"] = self.sky
        return out

    def set_group(self, name: str, data: np.ndarray):
        if name == "background":
            self.background = data
        elif name == "sky":
            self.sky = data
        else:
            aid = int(name.split("_", 1)[1])
            next(a for a in self.actors if a.actor_id == aid).cloud = data

    def group_slices(self) -> dict[str, slice]:
        """Row ranges of each group in assembled order (background, actors, sky)."""
        out = {}
        start = 0
        for name, arr in self.group_arrays().items():
            out[name] = slice(start, start + arr.shape[0])
            start += arr.shape[0]
        return out

    def frozen_channels(self, group: str) -> list[int]:
        """Channels excluded from updates; sky positions stay on the sphere."""
        return [0, 1, 2] if group == "sky" else []

    @property
    def total_count(self) -> int:
        return sum(a.shape[0] for a in self.group_arrays().values())

    def copy(self) -> "Scene":
        return Scene(
            background=self.background.copy(),
            actors=[Actor(a.actor_id, a.cloud.copy(), list(a.track), a.box.copy()) for a in self.actors],
            sky=self.sky.copy(),
            frame_count=self.frame_count,
            sky_center=self.sky_center.copy(),
            sky_radius=self.sky_radius,
        )


def transform_cloud_tensor(cloud: Tensor, pose: RigidPose) -> Tensor:
    """Rigidly move a feature cloud: positions get R p + t, raw quaternion
    channels are left-composed with the pose rotation; both maps are linear,
    so gradients pull back exactly to canonical coordinates."""
    dtype = cloud.dtype
    rot_t = pose.rotation_matrix().T.astype(dtype)
    trans = pose.trans.astype(dtype)
    lmat_t = quat_left_matrix(pose.quat).T.astype(dtype)
    pos = ad.matmul(cloud[:, POS], Tensor(rot_t)) + Tensor(trans)
    quat = ad.matmul(cloud[:, QUAT], Tensor(lmat_t))
    return ad.concat([pos, cloud[:, 3:6], quat, cloud[:, 10:]], axis=1)


def assemble_frame_tensors(scene: Scene, frame: int, leaves: dict[str, Tensor] | None = None) -> Tensor:
    """Concatenate background, actors (posed for ``frame``), and sky.

    ``leaves`` substitutes differentiable tensors for the stored group
    arrays; omitted groups fall back to constants.
    """
    if not (0 <= frame < scene.frame_count):
        raise FrameOutOfRange(f"frame {frame} not in [0, {scene.frame_count})")
    leaves = leaves or {}

    def tensor_of(name: str, arr: np.ndarray) -> Tensor:
        return leaves.get(name, Tensor(arr))

    parts = [tensor_of("background", scene.background)]
    for a in scene.actors:
        cloud = tensor_of(f"actor_{a.actor_id}", a.cloud)
        pose = a.track[frame]
        parts.append(cloud if pose.is_identity() else transform_cloud_tensor(cloud, pose))
    parts.append(tensor_of("sky", scene.sky))
    return ad.concat(parts, axis=0)


def assemble_frame(scene: Scene, frame: int) -> np.ndarray:
    return assemble_frame_tensors(scene, frame).data


@dataclass
class ScaffoldPoints:
    """Approximate geometry: world points for the background, canonical-frame
    points for each actor (label = actor id, -1 for background)."""

    positions: np.ndarray  # (N, 3)
    labels: np.ndarray     # (N,) int32

    def group(self, label: int) -> np.ndarray:
        return self.positions[self.labels == label]


def third_nearest_distance(pts: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to its 3rd nearest other point."""
    if pts.shape[0] < 4:
        raise TooFewPoints(f"need >= 4 points, got {pts.shape[0]}")
    dists, _ = cKDTree(pts).query(pts, k=4)
    return np.maximum(dists[:, 3], D3_FLOOR)


def _init_channels(pts: np.ndarray, channels: int, rng: np.random.Generator,
                   scale_values: np.ndarray, opacity: float, dtype) -> np.ndarray:
    m = pts.shape[0]
    cloud = np.zeros((m, channels), dtype=dtype)
    cloud[:, POS] = pts
    cloud[:, SCALE] = np.log(scale_values)[:, None]
    cloud[:, QUAT] = [1.0, 0.0, 0.0, 0.0]
    cloud[:, COLOR] = logit(0.5)
    cloud[:, OPACITY] = logit(opacity)
    if channels > PHYSICAL_CHANNELS:
        cloud[:, PHYSICAL_CHANNELS:] = rng.normal(0.0, 0.02, size=(m, channels - PHYSICAL_CHANNELS))
    return cloud


def init_from_scaffold(scaffold: ScaffoldPoints,
                       actor_tracks: dict[int, tuple[list[RigidPose], np.ndarray]],
                       frame_count: int,
                       channels: int = DEFAULT_CHANNELS,
                       rng: np.random.Generator | None = None,
                       sky_radius: float = 2048.0,
                       sky_rows: int = 64,
                       sky_cols: int = 256,
                       sky_center: np.ndarray | None = None,
                       dtype=np.float32) -> Scene:
    """Build the initial scene state from scaffold points.

    Scale starts isotropic at the third-nearest-neighbor distance, rotation
    at identity, opacity at 0.7; a zero decode network reproduces exactly
    these values.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sky_center = np.zeros(3) if sky_center is None else np.asarray(sky_center, dtype=np.float64)

    bg_pts = scaffold.group(-1)
    bg = _init_channels(bg_pts.astype(np.float64), channels, rng,
                        third_nearest_distance(bg_pts.astype(np.float64)), 0.7, dtype)
    actors = []
    for actor_id in sorted(actor_tracks):
        track, box = actor_tracks[actor_id]
        pts = scaffold.group(actor_id).astype(np.float64)
        cloud = _init_channels(pts, channels, rng, third_nearest_distance(pts), 0.7, dtype)
        actors.append(Actor(actor_id, cloud, track, np.asarray(box, dtype=np.float64)))
    sky = init_sky(sky_radius, sky_rows, sky_cols, channels=channels, rng=rng,
                   center=sky_center, dtype=dtype)
    return Scene(background=bg, actors=actors, sky=sky, frame_count=frame_count,
                 sky_center=sky_center, sky_radius=sky_radius)


SKY_LAT_MIN_DEG = -15.0
SKY_LAT_MAX_DEG = 30.0


def init_sky(radius: float, rows: int, cols: int, channels: int = DEFAULT_CHANNELS,
             rng: np.random.Generator | None = None, center: np.ndarray | None = None,
             dtype=np.float32) -> np.ndarray:
    """Equirectangular band of splats on a distant sphere around ``center``.

    Latitude spans -15 deg to +30 deg relative to the scene's horizontal
    plane; points sit at cell centers. Scale starts at the local grid arc
    length; positions are frozen afterwards (appearance-only updates).
    """
    if rows <= 0 or cols <= 0:
        raise ValueError("sky grid must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    center = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)

    lat_min, lat_max = np.deg2rad([SKY_LAT_MIN_DEG, SKY_LAT_MAX_DEG])
    lat = lat_min + (np.arange(rows) + 0.5) * (lat_max - lat_min) / rows
    lon = np.arange(cols) * (2.0 * np.pi / cols)
    lat_g, lon_g = np.meshgrid(lat, lon, indexing="ij")
    lat_g = lat_g.ravel()
    lon_g = lon_g.ravel()
    pts = center + radius * np.column_stack(
        [np.cos(lat_g) * np.cos(lon_g), np.cos(lat_g) * np.sin(lon_g), np.sin(lat_g)]
    )
    arc_lat = radius * (lat_max - lat_min) / rows
    arc_lon = radius * np.cos(lat_g) * (2.0 * np.pi / cols)
    spacing = np.maximum(arc_lat, arc_lon)
    return _init_channels(pts, channels, rng, spacing, 0.99, dtype)
