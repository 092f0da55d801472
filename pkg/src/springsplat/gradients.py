"""Reverse-mode gradients of rollout losses, plus a finite-difference oracle.

The backward pass is a hand-derived discrete adjoint of ``dynamics.simulate``.
Every substep state is stored during the forward pass, so memory grows
linearly with the number of substeps. At non-smooth points (ground contact,
the soft-vector clamp, ``|dl|**p_k`` at zero) the derivative of the branch
taken in the forward pass is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels, metrics
from .dynamics import (
    PhysicalParams,
    RolloutRecord,
    SimulationError,
    effective_n_c,
    interpolate_kernels,
    sigmoid,
    simulate,
    soft_vector_grad,
)
from .geometry import AnchorSystem, BindingTable, SpringTopology
from .trajectory import Trajectory

LOSS_KINDS = ("chamfer", "l2")


@dataclass
class LossSpec:
    """How predicted keyframes are compared to observations.

    ``chamfer`` is the symmetric Chamfer distance per frame; ``l2`` is the mean
    squared distance between corresponding points. Frame weights default to
    a uniform mean over keyframes. With a binding table, the compared points
    are the IDW-interpolated kernels rather than the anchors.
    """

    kind: str = "chamfer"
    frame_weights: Optional[np.ndarray] = None
    binding: Optional[BindingTable] = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")

    def weights(self, n_frames: int) -> np.ndarray:
        if self.frame_weights is None:
            return np.full(n_frames, 1.0 / n_frames)
        w = np.asarray(self.frame_weights, dtype=np.float64).reshape(-1)
        if len(w) != n_frames:
            raise ValueError(f"{len(w)} frame weights for {n_frames} keyframes")
        return w


@dataclass
class ParamGradient:
    v0: np.ndarray
    log_k: np.ndarray
    kappa: float
    boundary: dict = field(default_factory=dict)

    def as_vector(self) -> np.ndarray:
        tail = [self.boundary[key] for key in BOUNDARY_KEYS if key in self.boundary]
        return np.concatenate([self.v0, self.log_k, [self.kappa], tail])


BOUNDARY_KEYS = ("height", "friction_logit")


def pack(params: PhysicalParams) -> np.ndarray:
    """Learnable parameters as one flat vector: v0, log k, kappa, ground terms."""
    tail = []
    if params.boundary is not None:
        tail = [params.boundary.height, params.boundary.friction_logit]
    return np.concatenate([params.v0, params.log_k, [params.kappa], tail])


def unpack(vec, template: PhysicalParams) -> PhysicalParams:
    vec = np.asarray(vec, dtype=np.float64)
    n = len(template.log_k)
    out = template.copy()
    out.v0 = vec[:3].copy()
    out.log_k = vec[3:3 + n].copy()
    out.kappa = float(vec[3 + n])
    if out.boundary is not None:
        out.boundary.height = float(vec[4 + n])
        out.boundary.friction_logit = float(vec[5 + n])
    return out


def gradient_from_vector(vec, template: PhysicalParams) -> ParamGradient:
    vec = np.asarray(vec, dtype=np.float64)
    n = len(template.log_k)
    bnd = {}
    if template.boundary is not None:
        bnd = {"height": float(vec[4 + n]), "friction_logit": float(vec[5 + n])}
    return ParamGradient(vec[:3].copy(), vec[3:3 + n].copy(), float(vec[3 + n]), bnd)


def _predicted(record: RolloutRecord, spec: LossSpec) -> np.ndarray:
    frames = record.keyframe_positions
    if spec.binding is not None:
        frames = np.stack([interpolate_kernels(spec.binding, f) for f in frames])
    return frames


def _frame_loss(kind, pred, obs):
    if kind == "chamfer":
        return metrics.chamfer_and_grad(pred, obs)
    if pred.shape != obs.shape:
        raise ValueError("l2 loss needs point-to-point correspondence (equal frame sizes)")
    diff = pred - obs
    return float(np.sum(diff * diff) / len(pred)), 2.0 * diff / len(pred)


def _keyframe_loss(record, observations: Trajectory, spec: LossSpec):
    if len(observations) != len(record.keyframe_positions):
        raise ValueError(
            f"observation has {len(observations)} keyframes, rollout produced {len(record.keyframe_positions)}"
        )
    pred = _predicted(record, spec)
    w = spec.weights(len(pred))
    total = 0.0
    grads = np.zeros_like(pred)
    for f in range(len(pred)):
        if w[f] == 0.0:
            continue
        value, g = _frame_loss(spec.kind, pred[f], observations.frames[f].positions)
        total += w[f] * value
        grads[f] = w[f] * g
    if spec.binding is not None:
        # pull kernel gradients back onto anchors through the frozen IDW weights
        wts = spec.binding.weights()
        idx = spec.binding.anchor_indices.ravel()
        n_anchor = record.keyframe_positions.shape[1]
        back = np.zeros_like(record.keyframe_positions)
        for f in range(len(pred)):
            contrib = wts[..., None] * grads[f][:, None, :]
            for c in range(3):
                back[f, :, c] = np.bincount(idx, weights=contrib[..., c].ravel(), minlength=n_anchor)
        grads = back
    return total, grads


def rollout_loss(anchors, topology, params, observations: Trajectory, loss_spec: LossSpec, n_t: int) -> float:
    """Loss of a plain rollout; the forward half of ``grad_rollout``."""
    pos = anchors.positions if isinstance(anchors, AnchorSystem) else np.asarray(anchors, dtype=np.float64)
    rec = simulate(pos, topology, params, len(observations), n_t, observations.dt_frame)
    return _keyframe_loss(rec, observations, loss_spec)[0]


def grad_rollout(anchors, topology: SpringTopology, params: PhysicalParams, observations: Trajectory,
                 loss_spec: Optional[LossSpec] = None, n_t: int = 4):
    """Loss of the rollout against ``observations`` and its exact parameter gradient.

    Returns ``(loss, ParamGradient)``. The stiffness gradient is with respect
    to ``log k``.
    """
    loss_spec = loss_spec or LossSpec()
    pos = anchors.positions if isinstance(anchors, AnchorSystem) else np.asarray(anchors, dtype=np.float64)
    rec = simulate(pos, topology, params, len(observations), n_t, observations.dt_frame, record=True)
    loss, g_key = _keyframe_loss(rec, observations, loss_spec)

    k = params.k
    eta = rec.eta
    dt = rec.dt
    bnd = params.boundary
    mu = bnd.friction if bnd is not None else 0.0
    g_x = g_key[-1].copy()
    g_v = np.zeros_like(g_x)
    g_k = np.zeros_like(k)
    g_eta = np.zeros_like(eta)
    g_height = 0.0
    g_mu = 0.0
    p_k, damping = float(params.p_k), float(params.damping)

    n_frames = len(observations)
    s = len(rec.xs)
    for frame in range(n_frames - 1, 0, -1):
        for _ in range(rec.n_t):
            s -= 1
            hit = rec.contacts[s]
            # boundary
            if bnd is not None and np.any(hit):
                g_height += float(np.sum(g_x[hit, 2]))
                g_x = g_x.copy()
                g_x[hit, 2] = 0.0
                g_v = g_v.copy()
                if bnd.sticky:
                    g_v[hit] = 0.0
                else:
                    g_mu -= float(np.sum(rec.v_hats[s][hit, :2] * g_v[hit, :2]))
                    g_v[hit, 2] = 0.0
                    g_v[hit, :2] *= 1.0 - mu
            # x_hat = x + v_hat dt ; v_hat = v + F dt / m
            g_vhat = g_v + g_x * dt
            g_force = g_vhat * (dt / params.mass)
            fx, fv, fk, feta = _kernels.force_vjp(rec.xs[s], rec.vs[s], g_force, topology.neighbors,
                                                  topology.rest_lengths, k, eta, p_k, damping)
            g_x = g_x + fx
            g_v = g_vhat + fv
            g_k += fk
            g_eta += feta
            if not (np.all(np.isfinite(g_x)) and np.all(np.isfinite(g_v))):
                raise SimulationError(f"non-finite adjoint at step {s}", step=s)
        g_x = g_x + g_key[frame - 1]

    n_c = effective_n_c(params, topology.n_k)
    g_kappa = float(np.dot(g_eta, soft_vector_grad(params.kappa, n_c, topology.n_k)))
    boundary = {}
    if bnd is not None:
        boundary = {"height": g_height, "friction_logit": g_mu * mu * (1.0 - mu)}
    grad = ParamGradient(v0=g_v.sum(axis=0), log_k=g_k * k, kappa=g_kappa, boundary=boundary)
    return loss, grad


def branch_signature(anchors, topology, params, observations, loss_spec: LossSpec, n_t: int) -> bytes:
    """Contact pattern, soft-vector clamp pattern and Chamfer matches of a rollout.

    Two parameter vectors with equal signatures lie on the same smooth piece of
    the loss, so a finite difference between them is meaningful.
    """
    return _loss_and_signature(anchors, topology, params, observations, loss_spec, n_t)[1]


def _loss_and_signature(anchors, topology, params, observations, loss_spec, n_t):
    pos = anchors.positions if isinstance(anchors, AnchorSystem) else np.asarray(anchors, dtype=np.float64)
    rec = simulate(pos, topology, params, len(observations), n_t, observations.dt_frame, record=True)
    loss = _keyframe_loss(rec, observations, loss_spec)[0]
    parts = [np.packbits(np.concatenate([c.ravel() for c in rec.contacts])).tobytes() if rec.contacts else b""]
    parts.append(np.packbits(rec.eta > 0).tobytes())
    if loss_spec.kind == "chamfer":
        pred = _predicted(rec, loss_spec)
        for f in range(len(pred)):
            ia, ib = metrics.chamfer_assignment(pred[f], observations.frames[f].positions)
            parts.append(ia.astype("<i8").tobytes() + ib.astype("<i8").tobytes())
    return loss, b"|".join(parts)


@dataclass
class GradientCheck:
    adjoint: np.ndarray     # packed reverse-mode gradient
    numeric: np.ndarray     # packed central differences
    rel_error: np.ndarray
    excluded: np.ndarray    # coordinates whose +-h probe changes the branch

    def passed(self, rtol_most=1e-3, frac=0.95, rtol_all=1e-2) -> bool:
        err = self.rel_error[~self.excluded]
        return bool(np.mean(err < rtol_most) >= frac and np.all(err < rtol_all))


def gradient_check(anchors, topology, params: PhysicalParams, observations: Trajectory,
                   loss_spec: Optional[LossSpec] = None, n_t: int = 4, h: float = 1e-4,
                   floor: float = 1e-6) -> GradientCheck:
    """Compare ``grad_rollout`` with central differences coordinate by coordinate.

    The relative error is ``|a - b| / max(|a|, |b|, floor * max|b|)``. A
    coordinate is excluded when either probe lands on a different branch
    (contact set, clamp pattern or Chamfer matches) than the base point.
    """
    loss_spec = loss_spec or LossSpec()
    _, grad = grad_rollout(anchors, topology, params, observations, loss_spec, n_t)
    base = pack(params)
    _, sig = _loss_and_signature(anchors, topology, params, observations, loss_spec, n_t)
    numeric = np.empty(len(base))
    excluded = np.zeros(len(base), dtype=bool)
    for i in range(len(base)):
        vals = []
        for sgn in (1.0, -1.0):
            vec = base.copy()
            vec[i] += sgn * h
            loss, s = _loss_and_signature(anchors, topology, unpack(vec, params), observations, loss_spec, n_t)
            vals.append(loss)
            excluded[i] |= s != sig
        numeric[i] = (vals[0] - vals[1]) / (2.0 * h)
    adjoint = grad.as_vector()
    scale = np.maximum(np.maximum(np.abs(adjoint), np.abs(numeric)), floor * np.abs(numeric).max())
    rel = np.abs(adjoint - numeric) / np.where(scale > 0, scale, 1.0)
    return GradientCheck(adjoint, numeric, rel, excluded)


def finite_diff_gradient(objective: Callable, params, h: float = 1e-4):
    """Central differences ``(f(p + h) - f(p - h)) / 2h`` for every coordinate.

    ``params`` may be a ``PhysicalParams`` (perturbed in the packed learnable
    space, returns a ``ParamGradient``), an array, or a scalar.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    if isinstance(params, PhysicalParams):
        base = pack(params)
        g = _central(lambda vec: objective(unpack(vec, params)), base, h)
        return gradient_from_vector(g, params)
    if np.isscalar(params):
        return _central(lambda vec: objective(float(vec[0])), np.array([float(params)]), h)[0]
    arr = np.asarray(params, dtype=np.float64)
    return _central(lambda vec: objective(vec.reshape(arr.shape)), arr.ravel(), h).reshape(arr.shape)


def _central(f, base, h):
    out = np.empty(len(base))
    for i in range(len(base)):
        plus = base.copy()
        minus = base.copy()
        plus[i] += h
        minus[i] -= h
        out[i] = (f(plus) - f(minus)) / (2.0 * h)
    return out
