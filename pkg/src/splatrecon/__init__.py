"""Differentiable Gaussian-splat rendering with a learned scene-reconstruction
optimizer, a per-scene gradient-descent baseline, procedural synthetic data,
and an interactive render service."""

from .geom import (
    BehindCamera,
    Camera,
    CameraIntrinsics,
    RigidPose,
    compose,
    project,
    transform_point,
)
from .rasterizer import ExplicitGaussians, RenderOutput, render, render_backward

__all__ = [
    "BehindCamera",
    "Camera",
    "CameraIntrinsics",
    "RigidPose",
    "compose",
    "project",
    "transform_point",
    "ExplicitGaussians",
    "RenderOutput",
    "render",
    "render_backward",
]

__version__ = "0.1.0"
