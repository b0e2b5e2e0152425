"""Rigid transforms, pinhole cameras, and image conventions.

Conventions used throughout the package:
  * quaternions are (w, x, y, z) and kept unit-norm,
  * camera poses are world-to-camera, +z forward in the camera frame,
  * images are row-major float arrays of shape (H, W, 3) with values in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BehindCamera(Exception):
    """Point is closer than the near plane; it must be culled, not rendered."""


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("degenerate quaternion (norm < 1e-12)")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method)."""
    m = np.asarray(rot, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


def quat_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc unit quaternion rotating direction a onto direction b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    d = float(a @ b)
    if d < -1.0 + 1e-12:
        axis = np.cross(a, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(axis) < 1e-8:
            axis = np.cross(a, np.array([0.0, 1.0, 0.0]))
        return quat_from_axis_angle(axis, np.pi)
    axis = np.cross(a, b)
    return quat_normalize(np.concatenate([[1.0 + d], axis]))


def quat_left_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix L such that quat_mul(q, p) == L @ p for any quaternion p."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


@dataclass(frozen=True)
class RigidPose:
    """Rotation (unit quaternion) followed by translation."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "quat", quat_normalize(self.quat))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64))

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose()

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def inverse(self) -> "RigidPose":
        qc = quat_conj(self.quat)
        return RigidPose(qc, -(quat_to_matrix(qc) @ self.trans))

    def is_identity(self, tol: float = 0.0) -> bool:
        return (
            abs(abs(self.quat[0]) - 1.0) <= tol
            and np.all(np.abs(self.quat[1:]) <= tol)
            and np.all(np.abs(self.trans) <= tol)
        )


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Pose applying b first, then a."""
    return RigidPose(quat_mul(a.quat, b.quat), a.rotation_matrix() @ b.trans + a.trans)


def transform_point(pose: RigidPose, p) -> np.ndarray:
    return pose.rotation_matrix() @ np.asarray(p, dtype=np.float64) + pose.trans


def transform_points(pose: RigidPose, pts: np.ndarray) -> np.ndarray:
    """Apply a pose to an (N, 3) array of points."""
    return pts @ pose.rotation_matrix().T + pose.trans


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: RigidPose = field(default_factory=RigidPose.identity)  # world-to-camera
    near: float = 0.1

    def __post_init__(self):
        if self.near <= 0:
            raise ValueError("near plane must be positive")


def project(cam: Camera, p_world) -> tuple[float, float, float]:
    """Pinhole projection of a world point; returns (u, v, depth) in pixels/meters.

    Raises BehindCamera when the camera-space depth is below the near plane.
    """
    p = transform_point(cam.pose, p_world)
    if p[2] < cam.near:
        raise BehindCamera(f"depth {p[2]:.4f} < near {cam.near}")
    k = cam.intrinsics
    return (k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy, p[2])


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check an (H, W, 3) float image for finiteness and clamp it to [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return np.clip(img, 0.0, 1.0)
