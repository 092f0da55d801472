"""Spring-mass dynamics on anchor points.

Forces follow a directed KNN graph: anchor i feels one spring and one
damper per entry of its own neighbor row, and nothing from rows that list i
as a neighbor. Per-spring stiffness and damping are derived from per-anchor
values, ``k_ij = k_i / l_ij`` and ``zeta_ij = zeta0 / l_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import _kernels
from .geometry import AnchorSystem, BindingTable, SpringTopology
from .trajectory import Trajectory

DEFAULT_GRAVITY = (0.0, 0.0, -9.8)
DEFAULT_STIFFNESS = 1000.0


class SimulationError(FloatingPointError):
    def __init__(self, message: str, step: Optional[int] = None, anchor: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.anchor = anchor


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class Boundary:
    """Ground plane ``z = height``. ``friction_logit`` maps to a coefficient in (0, 1)."""

    height: float = 0.0
    friction_logit: float = 0.0
    sticky: bool = False

    @property
    def friction(self) -> float:
        return float(sigmoid(self.friction_logit))


@dataclass
class PhysicalParams:
    log_k: np.ndarray
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kappa: float = 0.0
    boundary: Optional[Boundary] = field(default_factory=Boundary)
    mass: float = 1.0
    damping: float = 0.1
    p_k: float = 0.5
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    n_c: int = 16

    def __post_init__(self):
        self.log_k = np.asarray(self.log_k, dtype=np.float64).reshape(-1)
        self.v0 = np.asarray(self.v0, dtype=np.float64).reshape(3)
        self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        self.kappa = float(self.kappa)
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.p_k < 0:
            raise ValueError(f"p_k must be non-negative, got {self.p_k}")
        if self.n_c < 1:
            raise ValueError(f"n_c must be at least 1, got {self.n_c}")

    @classmethod
    def initial(cls, n_anchors: int, stiffness: float = DEFAULT_STIFFNESS, **kwargs) -> "PhysicalParams":
        return cls(log_k=np.full(n_anchors, np.log(stiffness)), **kwargs)

    @property
    def k(self) -> np.ndarray:
        return np.exp(self.log_k)

    def copy(self) -> "PhysicalParams":
        b = None if self.boundary is None else replace(self.boundary)
        return replace(self, log_k=self.log_k.copy(), v0=self.v0.copy(), gravity=self.gravity.copy(), boundary=b)


@dataclass(frozen=True)
class SimState:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0


def soft_vector(kappa: float, n_c: int, n_k: int) -> np.ndarray:
    """Per-rank spring weights; ranks up to ``n_c`` are always fully connected."""
    if not 1 <= n_c <= n_k:
        raise ValueError(f"need 1 <= n_c <= n_k, got n_c={n_c}, n_k={n_k}")
    eta = np.ones(n_k)
    power = np.arange(1, n_k - n_c + 1, dtype=np.float64)
    with np.errstate(over="ignore"):
        raw = 2.0 - np.exp(softplus(kappa)) ** power
    eta[n_c:] = np.clip(raw, 0.0, 1.0)
    return eta


def soft_vector_grad(kappa: float, n_c: int, n_k: int) -> np.ndarray:
    """d(eta)/d(kappa), zero wherever the clamp is active."""
    grad = np.zeros(n_k)
    power = np.arange(1, n_k - n_c + 1, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        base = np.exp(softplus(kappa))
        raw = 2.0 - base ** power
        # d/dk base**m = m * base**(m-1) * base * sigmoid(kappa)
        d = -power * base ** power * sigmoid(kappa)
    inside = (raw >= 0.0) & (raw <= 1.0)
    grad[n_c:] = np.where(inside, d, 0.0)
    return grad


def effective_n_c(params: PhysicalParams, n_k: int) -> int:
    return min(params.n_c, n_k)


def _axis(xi, xj):
    d = np.asarray(xi, dtype=np.float64) - np.asarray(xj, dtype=np.float64)
    r = np.sqrt(np.sum(d * d, axis=-1))
    safe = np.where(r > 0, r, 1.0)
    u = np.where((r > 0)[..., None], d / safe[..., None], 0.0)
    return d, r, u


def _signed_pow(dl, p_k):
    return np.sign(dl) * np.abs(dl) ** (1.0 + p_k)


def spring_force(x_i, x_j, rest_length, k_ij, eta_j, p_k):
    """Force on ``x_i`` from the spring to ``x_j``; broadcasts over leading axes.

    Magnitude ``eta * k * |dl|**(1 + p_k)``, directed to restore the rest length.
    Coincident endpoints give zero force.
    """
    _, r, u = _axis(x_i, x_j)
    mag = np.asarray(eta_j) * np.asarray(k_ij) * _signed_pow(r - rest_length, p_k)
    return -mag[..., None] * u


def damping_force(x_i, x_j, v_i, v_j, zeta_ij):
    _, _, u = _axis(x_i, x_j)
    w = np.asarray(v_i, dtype=np.float64) - np.asarray(v_j, dtype=np.float64)
    q = np.sum(w * u, axis=-1)
    return -(np.asarray(zeta_ij) * q)[..., None] * u


def total_force(state: SimState, topology: SpringTopology, params: PhysicalParams, eta) -> np.ndarray:
    return _forces(state.positions, state.velocities, topology, params.k, np.asarray(eta), params)


def _forces(x, v, topology, k, eta, params):
    return _kernels.forces(x, v, topology.neighbors, topology.rest_lengths, k, eta,
                           float(params.p_k), float(params.damping), float(params.mass), params.gravity)


def contact_mask(positions, boundary: Optional[Boundary]) -> np.ndarray:
    if boundary is None:
        return np.zeros(np.shape(positions)[:-1], dtype=bool)
    return np.asarray(positions)[..., 2] < boundary.height


def apply_boundary(position, velocity, boundary: Optional[Boundary]):
    """Project points below the ground back onto it and update their velocity.

    Sticky ground zeroes the velocity; otherwise the normal component is
    removed and the tangential part is scaled by ``1 - friction``.
    Works on single points or (N, 3) arrays and returns new arrays.
    """
    x = np.array(position, dtype=np.float64)
    v = np.array(velocity, dtype=np.float64)
    if boundary is None:
        return x, v
    hit = x[..., 2] < boundary.height
    if not np.any(hit):
        return x, v
    x[..., 2] = np.where(hit, boundary.height, x[..., 2])
    if boundary.sticky:
        v = np.where(hit[..., None], 0.0, v)
    else:
        scale = np.array([1.0 - boundary.friction, 1.0 - boundary.friction, 0.0])
        v = np.where(hit[..., None], v * scale, v)
    return x, v


def _check_finite(force, step_index):
    if not np.all(np.isfinite(force)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(force), axis=1))[0])
        raise SimulationError(
            f"non-finite force on anchor {bad} at step {step_index}", step=step_index, anchor=bad
        )


def step(state: SimState, topology: SpringTopology, params: PhysicalParams, eta, dt: float,
         step_index: int = 0) -> SimState:
    """One semi-implicit Euler step (velocity first), then the ground boundary."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x, v = state.positions, state.velocities
    f = _forces(x, v, topology, params.k, np.asarray(eta, dtype=np.float64), params)
    _check_finite(f, step_index)
    v_hat = v + f / params.mass * dt
    x_hat = x + v_hat * dt
    x_new, v_new = apply_boundary(x_hat, v_hat, params.boundary)
    return SimState(x_new, v_new, state.time + dt)


def interpolate_kernels(binding: BindingTable, anchor_positions) -> np.ndarray:
    """IDW kernel centers from the current anchor positions and the onset distances."""
    x = np.asarray(anchor_positions, dtype=np.float64)
    return np.einsum("ij,ijk->ik", binding.weights(), x[binding.anchor_indices])


@dataclass
class RolloutRecord:
    """Raw rollout output. The per-step lists are filled only when recording."""

    keyframe_positions: np.ndarray
    keyframe_velocities: np.ndarray
    dt: float
    n_t: int
    eta: np.ndarray
    xs: List[np.ndarray] = field(default_factory=list)
    vs: List[np.ndarray] = field(default_factory=list)
    v_hats: List[np.ndarray] = field(default_factory=list)
    contacts: List[np.ndarray] = field(default_factory=list)


def simulate(positions, topology: SpringTopology, params: PhysicalParams, n_keyframes: int,
             n_t: int, dt_frame: float, record: bool = False) -> RolloutRecord:
    """Integrate from ``positions`` with every anchor starting at ``params.v0``."""
    if n_t < 1:
        raise ValueError(f"n_t must be at least 1, got {n_t}")
    if n_keyframes < 1:
        raise ValueError(f"n_keyframes must be at least 1, got {n_keyframes}")
    x = np.array(positions, dtype=np.float64)
    if len(x) != topology.n_anchors or len(params.log_k) != len(x):
        raise ValueError("anchor count disagrees between positions, topology and params")
    v = np.tile(params.v0, (len(x), 1))
    dt = dt_frame / n_t
    eta = soft_vector(params.kappa, effective_n_c(params, topology.n_k), topology.n_k)
    k = params.k
    bnd = params.boundary

    kx = np.empty((n_keyframes,) + x.shape)
    kv = np.empty_like(kx)
    kx[0], kv[0] = x, v
    rec = RolloutRecord(kx, kv, dt, n_t, eta)
    step_index = 0
    for frame in range(1, n_keyframes):
        for _ in range(n_t):
            f = _forces(x, v, topology, k, eta, params)
            _check_finite(f, step_index)
            v_hat = v + f / params.mass * dt
            x_hat = x + v_hat * dt
            if record:
                rec.xs.append(x)
                rec.vs.append(v)
                rec.v_hats.append(v_hat)
                rec.contacts.append(contact_mask(x_hat, bnd))
            x, v = apply_boundary(x_hat, v_hat, bnd)
            step_index += 1
        kx[frame], kv[frame] = x, v
    return rec


def rollout(anchors: AnchorSystem, topology: SpringTopology, params: PhysicalParams, n_keyframes: int,
            n_t: int, dt_frame: float, binding: Optional[BindingTable] = None) -> Trajectory:
    """Simulate and return the keyframe clouds (anchors, or IDW kernels when bound)."""
    pos = anchors.positions if isinstance(anchors, AnchorSystem) else anchors
    rec = simulate(pos, topology, params, n_keyframes, n_t, dt_frame)
    frames = rec.keyframe_positions
    if binding is not None:
        frames = np.stack([interpolate_kernels(binding, f) for f in frames])
    return Trajectory.from_positions(frames, dt_frame)
