"""Posed views and source/target splits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Camera


class TooFewFrames(Exception):
    pass


@dataclass
class View:
    camera: Camera
    image: np.ndarray | None   # (H, W, 3) float in [0, 1], None when unavailable
    frame: int                 # scene timeline index


@dataclass
class FrameSet:
    views: list[View]
    source_idx: list[int] = field(default_factory=list)
    target_idx: list[int] = field(default_factory=list)

    def sources(self) -> list[View]:
        return [self.views[i] for i in self.source_idx]

    def targets(self) -> list[View]:
        return [self.views[i] for i in self.target_idx]

    def __len__(self) -> int:
        return len(self.views)


def split_every_other(frames: FrameSet) -> FrameSet:
    """Even view indices become sources, odd become targets."""
    if len(frames.views) < 2:
        raise TooFewFrames(f"need >= 2 frames, got {len(frames.views)}")
    n = len(frames.views)
    return FrameSet(frames.views, list(range(0, n, 2)), list(range(1, n, 2)))


def split_extrapolation(frames: FrameSet, n_source: int = 20, n_future: int = 3) -> FrameSet:
    """First ``n_source`` consecutive views are sources, the next ``n_future``
    are held out, probing robustness to forward extrapolation."""
    if len(frames.views) < n_source + n_future:
        raise TooFewFrames(f"need >= {n_source + n_future} frames, got {len(frames.views)}")
    return FrameSet(frames.views, list(range(n_source)), list(range(n_source, n_source + n_future)))
