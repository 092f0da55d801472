from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .geometry import PointCloud


@dataclass
class Trajectory:
    """Keyframe point clouds sampled at a uniform frame interval (meters, seconds)."""

    times: np.ndarray
    frames: List[PointCloud]
    dt_frame: float
    units: str = "m"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.frames = [f if isinstance(f, PointCloud) else PointCloud(f) for f in self.frames]
        if len(self.times) != len(self.frames):
            raise ValueError(f"{len(self.times)} times for {len(self.frames)} frames")
        if len(self.frames) < 1:
            raise ValueError("trajectory has no keyframes")
        if not self.dt_frame > 0:
            raise ValueError(f"frame interval must be positive, got {self.dt_frame}")
        steps = np.diff(self.times)
        if np.any(steps <= 0):
            raise ValueError("keyframe times must be strictly increasing")
        if np.any(np.abs(steps - self.dt_frame) > 1e-9):
            raise ValueError("keyframes are not uniformly spaced at dt_frame")

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def from_positions(cls, positions, dt_frame: float, t0: float = 0.0) -> "Trajectory":
        positions = np.asarray(positions, dtype=np.float64)
        times = t0 + dt_frame * np.arange(len(positions))
        return cls(times, [PointCloud(p) for p in positions], dt_frame)

    def positions(self) -> np.ndarray:
        """Stacked (F, N, 3) array; only valid when every frame has the same size."""
        return np.stack([f.positions for f in self.frames])

    def centroids(self) -> np.ndarray:
        return np.stack([f.centroid() for f in self.frames])
