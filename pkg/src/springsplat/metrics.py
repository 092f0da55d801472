"""Point-cloud and image metrics.

Chamfer distance is the symmetric sum of the two directed mean squared
nearest-neighbor distances, in m^2. Tables quote it in units of 1e3 mm^2,
which is numerically the m^2 value times 1e3.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import PointCloud, farthest_point_indices

EMD_MAX_POINTS = 1024
PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# m^2 -> "1e3 mm^2"
CD_TABLE_SCALE = 1e3


def _points(cloud) -> np.ndarray:
    pts = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError("point cloud is empty")
    return pts


def _nearest(src: np.ndarray, dst: np.ndarray):
    """Index into ``dst`` of each point's nearest neighbor, and the squared distance."""
    if len(src) * len(dst) <= 65536:
        diff = src[:, None, :] - dst[None, :, :]
        idx = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    else:
        _, idx = cKDTree(dst).query(src, k=1)
    delta = src - dst[idx]
    return idx, np.einsum("ij,ij->i", delta, delta)


def chamfer(a, b) -> float:
    pa, pb = _points(a), _points(b)
    _, d_ab = _nearest(pa, pb)
    _, d_ba = _nearest(pb, pa)
    return float(np.sum(d_ab) / len(pa) + np.sum(d_ba) / len(pb))


def chamfer_and_grad(a, b):
    """Chamfer distance and its gradient with respect to the points of ``a``."""
    pa, pb = _points(a), _points(b)
    i_ab, d_ab = _nearest(pa, pb)
    i_ba, d_ba = _nearest(pb, pa)
    value = float(np.sum(d_ab) / len(pa) + np.sum(d_ba) / len(pb))
    grad = 2.0 * (pa - pb[i_ab]) / len(pa)
    pull = 2.0 * (pa[i_ba] - pb) / len(pb)
    for c in range(3):
        grad[:, c] += np.bincount(i_ba, weights=pull[:, c], minlength=len(pa))
    return value, grad


def chamfer_assignment(a, b):
    """Nearest-neighbor indices in both directions; used to detect branch changes."""
    pa, pb = _points(a), _points(b)
    return _nearest(pa, pb)[0], _nearest(pb, pa)[0]


def to_table_units(cd_m2: float) -> float:
    return cd_m2 * CD_TABLE_SCALE


def emd(a, b, max_points: int = EMD_MAX_POINTS) -> float:
    """Mean Euclidean cost of the optimal one-to-one matching.

    Larger clouds are reduced by farthest-point sampling (seed 0) to the common
    size ``min(|a|, |b|, max_points)`` before matching.
    """
    pa, pb = _points(a), _points(b)
    n = min(len(pa), len(pb), max_points)
    if len(pa) > n:
        pa = pa[farthest_point_indices(pa, n, 0)]
    if len(pb) > n:
        pb = pb[farthest_point_indices(pb, n, 0)]
    cost = emd_cost_matrix(pa, pb)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sum(cost[rows, cols]) / n)


def emd_cost_matrix(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    diff = pa[:, None, :] - pb[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _check_images(image, reference):
    x = np.asarray(image, dtype=np.float64)
    y = np.asarray(reference, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def psnr(image, reference) -> float:
    x, y = _check_images(image, reference)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable weighted sum over every full window (no padding)
    n = len(g)
    h, w = img.shape
    rows = sum(g[i] * img[i:h - n + 1 + i, :] for i in range(n))
    return sum(g[j] * rows[:, j:w - n + 1 + j] for j in range(n))


def ssim(image, reference) -> float:
    """Mean SSIM over all full 11x11 Gaussian windows, averaged over channels."""
    x, y = _check_images(image, reference)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if min(x.shape[0], x.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on each side, got {x.shape[:2]}")
    g = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    scores = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
        var_a = _filter_valid(a * a, g) - mu_a ** 2
        var_b = _filter_valid(b * b, g) - mu_b ** 2
        cov = _filter_valid(a * b, g) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class MetricReport:
    cd: Optional[float] = None
    emd: Optional[float] = None
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    cd_table_units: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def trajectory_report(pred, obs, table_units: bool = False) -> MetricReport:
    """Per-frame CD and EMD averaged over the keyframes of two trajectories."""
    if len(pred.frames) != len(obs.frames):
        raise ValueError(f"frame counts differ: {len(pred.frames)} vs {len(obs.frames)}")
    cds = [chamfer(p, o) for p, o in zip(pred.frames, obs.frames)]
    emds = [emd(p, o) for p, o in zip(pred.frames, obs.frames)]
    cd = float(np.mean(cds))
    return MetricReport(cd=to_table_units(cd) if table_units else cd, emd=float(np.mean(emds)),
                        cd_table_units=table_units)


def image_report(images, references) -> MetricReport:
    if len(images) != len(references):
        raise ValueError(f"image counts differ: {len(images)} vs {len(references)}")
    if not images:
        raise ValueError("no images to compare")
    return MetricReport(psnr=float(np.mean([psnr(a, b) for a, b in zip(images, references)])),
                        ssim=float(np.mean([ssim(a, b) for a, b in zip(images, references)])))
