"""Point containers, anchor sampling, KNN spring topology and kernel binding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# smallest kernel-anchor distance used in the IDW weights
EPS_DIST = 1e-8

# rows per block in the brute-force neighbor search
_KNN_CHUNK = 256


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array of points, got shape {arr.shape}")
    return arr


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    opacities: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = _as_points(self.positions)
        if len(self.positions) == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.positions):
                raise ValueError("colors and positions differ in length")
        if self.opacities is not None:
            self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
            if len(self.opacities) != len(self.positions):
                raise ValueError("opacities and positions differ in length")

    def __len__(self) -> int:
        return len(self.positions)

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass
class AnchorSystem:
    positions: np.ndarray
    velocities: np.ndarray = None
    mass: float = 1.0

    def __post_init__(self):
        self.positions = _as_points(self.positions)
        if self.velocities is None:
            self.velocities = np.zeros_like(self.positions)
        self.velocities = _as_points(self.velocities)
        if len(self.positions) < 2:
            raise ValueError(f"need at least 2 anchors, got {len(self.positions)}")
        if self.velocities.shape != self.positions.shape:
            raise ValueError("velocities and positions differ in shape")
        if not self.mass > 0:
            raise ValueError(f"anchor mass must be positive, got {self.mass}")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("anchor state has non-finite values")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class SpringTopology:
    """Directed KNN springs: ``neighbors[i, j]`` is the j-th nearest anchor of i."""

    neighbors: np.ndarray
    rest_lengths: np.ndarray

    @property
    def n_k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def n_anchors(self) -> int:
        return self.neighbors.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.neighbors, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.rest_lengths, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class BindingTable:
    anchor_indices: np.ndarray
    distances: np.ndarray
    p_b: float = 0.5

    @property
    def n_b(self) -> int:
        return self.anchor_indices.shape[1]

    def weights(self) -> np.ndarray:
        """Normalized IDW weights, one row per kernel."""
        w = 1.0 / self.distances ** self.p_b
        return w / w.sum(axis=1, keepdims=True)


def knn(query, reference, k: int, exclude_self: bool = False):
    """k nearest reference points for every query point.

    Exhaustive search with a stable sort, so equal distances come back in
    ascending reference index. With ``exclude_self`` the query must be the
    reference set itself and each point's own index is skipped.

    Returns ``(indices, distances)``, both of shape (len(query), k).
    """
    q = _as_points(query)
    r = _as_points(reference)
    if exclude_self and len(q) != len(r):
        raise ValueError("exclude_self requires query and reference to be the same set")
    need = k + 1 if exclude_self else k
    if k < 1 or len(r) < need:
        raise ValueError(
            f"k={k} too large for {len(r)} reference points"
            + (" (self excluded)" if exclude_self else "")
        )
    idx_out = np.empty((len(q), k), dtype=np.int64)
    dist_out = np.empty((len(q), k), dtype=np.float64)
    for start in range(0, len(q), _KNN_CHUNK):
        stop = min(start + _KNN_CHUNK, len(q))
        diff = q[start:stop, None, :] - r[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        if exclude_self:
            rows = np.arange(stop - start)
            d2[rows, start + rows] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx_out[start:stop] = order
        dist_out[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx_out, dist_out


def farthest_point_indices(points, n: int, seed: int = 0) -> np.ndarray:
    pts = _as_points(points)
    if n > len(pts):
        raise ValueError(f"cannot sample {n} points from a cloud of {len(pts)}")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = seed % len(pts)
    diff = pts - pts[chosen[0]]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, n):
        # argmax returns the lowest index among ties
        chosen[i] = int(np.argmax(min_d2))
        diff = pts - pts[chosen[i]]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
    return chosen


def volume_sample(points: PointCloud, n_a: int, seed: int = 0, mass: float = 1.0) -> AnchorSystem:
    """Pick ``n_a`` anchors from the kernel centers by farthest-point sampling."""
    pts = points.positions if isinstance(points, PointCloud) else _as_points(points)
    if len(pts) < n_a:
        raise ValueError(f"requested {n_a} anchors but the cloud has only {len(pts)} points")
    if n_a < 2:
        raise ValueError(f"need at least 2 anchors, got n_a={n_a}")
    idx = farthest_point_indices(pts, n_a, seed)
    return AnchorSystem(pts[idx].copy(), mass=mass)


def build_topology(anchors: AnchorSystem, n_k: int) -> SpringTopology:
    pos = anchors.positions if isinstance(anchors, AnchorSystem) else _as_points(anchors)
    if len(pos) <= n_k:
        raise ValueError(f"n_k={n_k} needs more than {n_k} anchors, got {len(pos)}")
    idx, dist = knn(pos, pos, n_k, exclude_self=True)
    if np.any(dist <= 0):
        raise ValueError("coincident anchors give zero rest length")
    idx.setflags(write=False)
    dist.setflags(write=False)
    return SpringTopology(idx, dist)


def bind_kernels(kernels, anchors: AnchorSystem, n_b: int, p_b: float = 0.5) -> BindingTable:
    """Bind each kernel to its ``n_b`` nearest anchors at their current positions."""
    kpos = kernels.positions if isinstance(kernels, PointCloud) else _as_points(kernels)
    apos = anchors.positions if isinstance(anchors, AnchorSystem) else _as_points(anchors)
    if n_b > len(apos):
        raise ValueError(f"n_b={n_b} exceeds the number of anchors ({len(apos)})")
    if not p_b > 0:
        raise ValueError(f"p_b must be positive, got {p_b}")
    idx, dist = knn(kpos, apos, n_b)
    dist = np.maximum(dist, EPS_DIST)
    idx.setflags(write=False)
    dist.setflags(write=False)
    return BindingTable(idx, dist, float(p_b))
