"""Synthetic objects and self-generated observation scenes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import Boundary, PhysicalParams, rollout
from .geometry import AnchorSystem, PointCloud, SpringTopology, build_topology, volume_sample
from .trajectory import Trajectory


def box_cloud(n: int, size=(0.2, 0.2, 0.2), center=(0.0, 0.0, 0.0), seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    size = np.asarray(size, dtype=np.float64)
    pts = rng.uniform(-0.5, 0.5, (n, 3)) * size + np.asarray(center, dtype=np.float64)
    colors = np.clip(0.5 + (pts - pts.mean(axis=0)) / size, 0.0, 1.0)
    return PointCloud(pts, colors=colors, opacities=np.full(n, 0.8))


def blob_cloud(n: int, seed: int = 0) -> PointCloud:
    """An asymmetric lumpy shape: a union of three offset ellipsoids, ~0.3 m across."""
    rng = np.random.default_rng(seed)
    lobes = [((0.0, 0.0, 0.0), (0.15, 0.08, 0.06)),
             ((0.10, 0.06, 0.03), (0.05, 0.07, 0.05)),
             ((-0.08, -0.02, 0.07), (0.04, 0.04, 0.08))]
    counts = rng.multinomial(n, [0.6, 0.25, 0.15])
    parts = []
    for (c, r), m in zip(lobes, counts):
        d = rng.normal(size=(m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        rad = rng.uniform(0, 1, m) ** (1 / 3)
        parts.append(np.asarray(c) + d * rad[:, None] * np.asarray(r))
    return PointCloud(np.concatenate(parts))


@dataclass
class DropScene:
    anchors: AnchorSystem
    topology: SpringTopology
    params: PhysicalParams
    observed: Trajectory
    n_t: int


def drop_scene(n_anchors: int = 256, n_k: int = 32, stiffness=1000.0, v0=(0.5, 0.0, -1.0),
               n_frames: int = 12, fps: float = 30.0, n_t: int = 32, height: float = 0.12,
               size=(0.2, 0.2, 0.2), kappa: float = 0.0, friction_logit: float = 0.0,
               sticky: bool = False, n_c: int = 16, seed: int = 0, cloud_points: Optional[int] = None) -> DropScene:
    """A box tossed onto the ground, simulated with known parameters.

    ``stiffness`` is a scalar or a per-anchor array. ``height`` is the initial
    height of the box's bottom face above the ground at z = 0.
    """
    cloud = box_cloud(cloud_points or 8 * n_anchors, size, (0.0, 0.0, height + size[2] / 2), seed)
    anchors = volume_sample(cloud, n_anchors, seed)
    topology = build_topology(anchors, n_k)
    k = np.broadcast_to(np.asarray(stiffness, dtype=np.float64), (n_anchors,))
    params = PhysicalParams(np.log(k), v0=np.asarray(v0, dtype=np.float64), kappa=kappa,
                            boundary=Boundary(0.0, friction_logit, sticky), n_c=n_c)
    observed = rollout(anchors, topology, params, n_frames, n_t, 1.0 / fps)
    return DropScene(anchors, topology, params, observed, n_t)


def two_region_stiffness(anchors: AnchorSystem, soft: float = 500.0, stiff: float = 2000.0,
                         axis: int = 0) -> np.ndarray:
    """Soft below the median coordinate along ``axis``, stiff above it."""
    coord = anchors.positions[:, axis]
    return np.where(coord > np.median(coord), stiff, soft)


@dataclass
class FitScene:
    """Start state plus a guess and observations from perturbed true parameters."""

    start: np.ndarray
    topology: SpringTopology
    params: PhysicalParams
    observed: Trajectory
    n_t: int


def bouncing_scene(seed: int, contact: bool = True, n_anchors: int = 64, n_k: int = 8,
                   n_keyframes: int = 3, n_t: int = 8, fps: float = 30.0) -> FitScene:
    """Small random blob with heterogeneous stiffness, optionally hitting the ground."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.1, 0.1, (n_anchors, 3))
    pts[:, 2] += 0.101 if contact else 0.5
    topology = build_topology(AnchorSystem(pts), n_k)
    v0 = rng.normal(0.0, 0.3, 3) + [0.0, 0.0, -1.0 if contact else 0.0]
    params = PhysicalParams(np.log(rng.uniform(300, 3000, n_anchors)), v0=v0, kappa=rng.uniform(-2, 1),
                            boundary=Boundary(0.0, rng.normal(), False), n_c=4)
    start = pts + rng.normal(0.0, 0.003, pts.shape)
    truth = params.copy()
    truth.log_k += rng.normal(0.0, 0.3, n_anchors)
    truth.v0 += rng.normal(0.0, 0.2, 3)
    observed = rollout(start, topology, truth, n_keyframes, n_t, 1.0 / fps)
    return FitScene(start, topology, params, observed, n_t)
