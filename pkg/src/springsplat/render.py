"""Forward rasterizer for isotropic 3D Gaussians.

Pixel (row, col) samples the image plane at coordinates (u, v) = (col, row).
The camera looks down +z with +y pointing down the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import PointCloud

ALPHA_MAX = 0.99
T_MIN = 1e-4
LOW_PASS = 0.3
SUPPORT_SIGMA = 3.0


@dataclass
class GaussianCloud:
    centers: np.ndarray
    scales: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.scales = np.broadcast_to(np.asarray(self.scales, dtype=np.float64), (n,)).copy()
        self.colors = np.broadcast_to(np.asarray(self.colors, dtype=np.float64), (n, 3)).copy()
        self.opacities = np.broadcast_to(np.asarray(self.opacities, dtype=np.float64), (n,)).copy()
        if np.any(self.scales <= 0):
            raise ValueError("kernel scales must be positive")
        for name in ("centers", "scales", "colors", "opacities"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite kernel {name}")

    def __len__(self) -> int:
        return len(self.centers)

    @classmethod
    def from_points(cls, cloud: PointCloud, scale: float, color=(0.8, 0.8, 0.8), opacity: float = 0.9):
        colors = cloud.colors if cloud.colors is not None else color
        opac = cloud.opacities if cloud.opacities is not None else opacity
        return cls(cloud.positions, scale, colors, opac)

    def with_centers(self, centers) -> "GaussianCloud":
        return GaussianCloud(centers, self.scales, self.colors, self.opacities)


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))
    near: float = 0.01

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        w = np.asarray(self.world_to_camera, dtype=np.float64)
        if w.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {w.shape}")
        rot = w[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("world_to_camera is not a rigid transform")
        self.world_to_camera = w

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), fov_deg=45.0, width=128, height=128, near=0.01):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        w = np.eye(4)
        w[:3, :3] = rot
        w[:3, 3] = -rot @ eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2.0, height / 2.0, width, height, w, near)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width,
                "height": self.height, "near": self.near,
                "world_to_camera": self.world_to_camera.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]),
                   int(d["height"]), np.asarray(d.get("world_to_camera", np.eye(4))), float(d.get("near", 0.01)))


@dataclass
class Projection:
    means: np.ndarray     # (N, 2) pixels
    covs: np.ndarray      # (N, 2, 2) pixels^2, without the low-pass term
    depths: np.ndarray    # (N,) meters
    visible: np.ndarray   # (N,) bool


def project_gaussian(cloud: GaussianCloud, camera: Camera) -> Projection:
    """Project centers and covariances ``J W (s^2 I) W^T J^T`` into the image."""
    w = camera.world_to_camera
    p = cloud.centers @ w[:3, :3].T + w[:3, 3]
    z = p[:, 2]
    visible = z > camera.near
    zs = np.where(visible, z, 1.0)
    means = np.stack([camera.fx * p[:, 0] / zs + camera.cx, camera.fy * p[:, 1] / zs + camera.cy], axis=1)
    jac = np.zeros((len(p), 2, 3))
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * p[:, 0] / zs ** 2
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * p[:, 1] / zs ** 2
    # rotation drops out of an isotropic covariance
    covs = (cloud.scales ** 2)[:, None, None] * np.einsum("nij,nkj->nik", jac, jac)
    return Projection(means, covs, z, visible)


def _depth_order(proj: Projection) -> np.ndarray:
    idx = np.flatnonzero(proj.visible)
    return idx[np.argsort(proj.depths[idx], kind="stable")]


def _composite(cloud, camera, proj, tile, channels):
    """Front-to-back compositing; returns (color accumulation, transmittance)."""
    h, w = camera.height, camera.width
    color = np.zeros((h, w, channels))
    trans = np.ones((h, w))
    order = _depth_order(proj)
    covs = proj.covs + LOW_PASS * np.eye(2)
    det = covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] * covs[:, 1, 0]
    inv = np.empty_like(covs)
    inv[:, 0, 0] = covs[:, 1, 1] / det
    inv[:, 1, 1] = covs[:, 0, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -covs[:, 0, 1] / det
    radius = SUPPORT_SIGMA * np.sqrt(np.stack([covs[:, 0, 0], covs[:, 1, 1]], axis=1))
    lo = np.floor(proj.means - radius).astype(np.int64)
    hi = np.ceil(proj.means + radius).astype(np.int64)

    tile = tile or max(h, w)
    for ty in range(0, h, tile):
        for tx in range(0, w, tile):
            y1, x1 = min(ty + tile, h), min(tx + tile, w)
            for n in order:
                c0, c1 = max(lo[n, 0], tx), min(hi[n, 0] + 1, x1)
                r0, r1 = max(lo[n, 1], ty), min(hi[n, 1] + 1, y1)
                if c0 >= c1 or r0 >= r1:
                    continue
                du = np.arange(c0, c1, dtype=np.float64)[None, :] - proj.means[n, 0]
                dv = np.arange(r0, r1, dtype=np.float64)[:, None] - proj.means[n, 1]
                maha = inv[n, 0, 0] * du * du + 2.0 * inv[n, 0, 1] * du * dv + inv[n, 1, 1] * dv * dv
                t = trans[r0:r1, c0:c1]
                live = (maha <= SUPPORT_SIGMA ** 2) & (t >= T_MIN)
                if not np.any(live):
                    continue
                alpha = np.where(live, np.minimum(ALPHA_MAX, cloud.opacities[n] * np.exp(-0.5 * maha)), 0.0)
                weight = t * alpha
                if channels:
                    color[r0:r1, c0:c1] += weight[..., None] * cloud.colors[n]
                trans[r0:r1, c0:c1] = t * (1.0 - alpha)
    return color, trans


def rasterize(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0),
              tile: Optional[int] = None) -> np.ndarray:
    """Render an (H, W, 3) image in [0, 1]. ``tile`` only changes the traversal order."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    if len(cloud) == 0:
        return np.broadcast_to(bg, (camera.height, camera.width, 3)).copy()
    proj = project_gaussian(cloud, camera)
    color, trans = _composite(cloud, camera, proj, tile, 3)
    return color + trans[..., None] * bg


def render_silhouette(cloud: GaussianCloud, camera: Camera, tile: Optional[int] = None) -> np.ndarray:
    """Accumulated opacity ``1 - T`` per pixel."""
    if len(cloud) == 0:
        return np.zeros((camera.height, camera.width))
    proj = project_gaussian(cloud, camera)
    _, trans = _composite(cloud, camera, proj, tile, 0)
    return 1.0 - trans


def to_uint8(image) -> np.ndarray:
    # np.round rounds half to even
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
