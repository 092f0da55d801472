"""Similarity alignment (scale, rotation, translation) by gradient descent.

Rotations use the continuous 6D parameterization: two 3-vectors turned into
an orthonormal frame by Gram-Schmidt. The objective is Chamfer distance plus
a squared centroid offset, with gradients derived by hand.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud
from .identification import Adam
from .metrics import chamfer_and_grad

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


def rot6d_to_matrix(r) -> np.ndarray:
    a1, a2 = _split6(r)
    n1 = np.linalg.norm(a1)
    if n1 == 0:
        raise ValueError("degenerate 6D rotation: first vector is zero")
    b1 = a1 / n1
    e2 = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(e2)
    if n2 <= 1e-12 * max(np.linalg.norm(a2), 1.0):
        raise ValueError("degenerate 6D rotation: vectors are parallel")
    b2 = e2 / n2
    return np.stack([b1, b2, np.cross(b1, b2)], axis=1)


def rot6d_backward(r, grad_matrix) -> np.ndarray:
    """Gradient with respect to the 6 parameters given dL/dR."""
    a1, a2 = _split6(r)
    gm = np.asarray(grad_matrix, dtype=np.float64)
    n1 = np.linalg.norm(a1)
    b1 = a1 / n1
    e2 = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(e2)
    b2 = e2 / n2
    g1, g2, g3 = gm[:, 0].copy(), gm[:, 1].copy(), gm[:, 2]
    # b3 = b1 x b2
    g1 += np.cross(b2, g3)
    g2 += np.cross(g3, b1)
    ge2 = (g2 - np.dot(g2, b2) * b2) / n2
    ga2 = ge2 - b1 * np.dot(b1, ge2)
    g1 -= np.dot(b1, a2) * ge2 + a2 * np.dot(b1, ge2)
    ga1 = (g1 - np.dot(g1, b1) * b1) / n1
    return np.concatenate([ga1, ga2])


def matrix_to_rot6d(rot) -> np.ndarray:
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[:, 0], rot[:, 1]])


def _split6(r):
    r = np.asarray(r, dtype=np.float64).reshape(6)
    return r[:3], r[3:]


@dataclass
class Similarity:
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rot6d: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0, 1.0, 0]))

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64).reshape(6)

    @property
    def rotation(self) -> np.ndarray:
        return rot6d_to_matrix(self.rot6d)

    def inverse(self) -> "Similarity":
        rt = self.rotation.T
        return Similarity(1.0 / self.scale, -rt @ self.translation / self.scale, matrix_to_rot6d(rt))

    def to_json(self) -> str:
        return json.dumps({"scale": float(self.scale), "translation": self.translation.tolist(),
                           "rot6d": self.rot6d.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Similarity":
        d = json.loads(text)
        return cls(float(d["scale"]), d["translation"], d["rot6d"])


def apply_similarity(transform: Similarity, points) -> np.ndarray:
    pts = points.positions if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    return transform.scale * pts @ transform.rotation.T + transform.translation


def rotation_angle_deg(r_a, r_b) -> float:
    """Geodesic angle between two rotation matrices."""
    c = (np.trace(np.asarray(r_a).T @ np.asarray(r_b)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass
class RegistrationConfig:
    iterations: int = 500
    lr: float = 1e-2
    lr_final: float = 1e-4
    lambda_cd: float = 1.0
    lambda_center: float = 1.0


def registration_loss(source, target, log_s, translation, r6, config: RegistrationConfig):
    """Objective value and its gradient in (log s, t, r6)."""
    rot = rot6d_to_matrix(r6)
    s = np.exp(log_s)
    rp = source @ rot.T
    moved = s * rp + translation
    cd, g = chamfer_and_grad(moved, target)
    offset = moved.mean(axis=0) - target.mean(axis=0)
    loss = config.lambda_cd * cd + config.lambda_center * float(offset @ offset)
    g = config.lambda_cd * g + config.lambda_center * 2.0 * offset / len(moved)
    g_t = g.sum(axis=0)
    g_logs = s * float(np.sum(g * rp))
    g_rot = s * g.T @ source
    return loss, g_logs, g_t, rot6d_backward(r6, g_rot)


def initial_similarity(source: np.ndarray, target: np.ndarray) -> Similarity:
    diag = lambda p: np.linalg.norm(p.max(axis=0) - p.min(axis=0))
    s = diag(target) / diag(source)
    return Similarity(s, target.mean(axis=0) - s * source.mean(axis=0))


def register(source, target, config: RegistrationConfig = None) -> Similarity:
    """Align ``source`` onto ``target``; returns the best transform seen."""
    config = config or RegistrationConfig()
    src = source.positions if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    tgt = target.positions if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("registration needs non-empty clouds")
    init = initial_similarity(src, tgt)
    x = np.concatenate([[np.log(init.scale)], init.translation, init.rot6d])
    opt = Adam(np.full(10, config.lr))
    best_loss, best_x = np.inf, x.copy()
    decay = (config.lr_final / config.lr) ** (1.0 / max(config.iterations - 1, 1))
    for it in range(config.iterations):
        loss, g_logs, g_t, g_r = registration_loss(src, tgt, x[0], x[1:4], x[4:], config)
        if not np.isfinite(loss):
            raise RegistrationError(f"registration diverged at iteration {it}")
        if loss < best_loss:
            best_loss, best_x = loss, x.copy()
        opt.lr = np.full(10, config.lr * decay ** it)
        x = opt.step(x, np.concatenate([[g_logs], g_t, g_r]))
    log.debug("registration best loss %.3e", best_loss)
    return Similarity(float(np.exp(best_x[0])), best_x[1:4], best_x[4:])
