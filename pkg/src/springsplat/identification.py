"""Recover physical parameters from an observed keyframe trajectory.

Two stages: a closed-form initial-velocity fit on the first few
(contact-free) frames, then Adam on log-stiffness, the soft-vector control,
friction and optionally v0, scored by the mean per-frame Chamfer distance
between the simulated and observed clouds. The number of substeps per
frame doubles whenever the loss plateaus.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import DEFAULT_GRAVITY, Boundary, PhysicalParams, SimulationError
from .geometry import AnchorSystem, BindingTable, SpringTopology
from .gradients import LossSpec, grad_rollout, pack, rollout_loss, unpack
from .metrics import chamfer
from .trajectory import Trajectory

log = logging.getLogger(__name__)


class IdentificationError(RuntimeError):
    pass


@dataclass
class IdentConfig:
    iterations: int = 300
    lr_log_k: float = 1e-2
    lr_kappa: float = 1e-2
    lr_boundary: float = 1e-3
    lr_v0: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # rescale each gradient to unit norm so rare contact spikes cannot stall Adam
    normalize_grad: bool = True

    n_t_init: int = 4
    n_t_growth: int = 2
    n_t_max: int = 64
    plateau_window: int = 20
    plateau_threshold: float = 1e-3

    n_pre: int = 3
    refine_v0: bool = True
    single_k: bool = False
    learn_ground_height: bool = False
    loss_kind: str = "chamfer"

    initial_stiffness: float = 1000.0
    initial_kappa: float = 0.0
    initial_friction_logit: float = 0.0

    mass: float = 1.0
    damping: float = 0.1
    p_k: float = 0.5
    n_c: int = 16
    gravity: Tuple[float, float, float] = DEFAULT_GRAVITY
    ground: bool = True
    ground_height: float = 0.0
    sticky: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.n_t_init < 1 or self.n_t_max < self.n_t_init:
            raise ValueError(f"need 1 <= n_t_init <= n_t_max, got {self.n_t_init}, {self.n_t_max}")
        self.gravity = tuple(float(g) for g in self.gravity)

    def initial_params(self, n_anchors: int, v0=(0.0, 0.0, 0.0)) -> PhysicalParams:
        boundary = None
        if self.ground:
            boundary = Boundary(self.ground_height, self.initial_friction_logit, self.sticky)
        return PhysicalParams.initial(
            n_anchors, self.initial_stiffness, v0=np.asarray(v0, dtype=np.float64),
            kappa=self.initial_kappa, boundary=boundary, mass=self.mass, damping=self.damping,
            p_k=self.p_k, gravity=np.asarray(self.gravity), n_c=self.n_c,
        )


def trajectory_loss(predicted: Trajectory, observed: Trajectory) -> float:
    """Mean over keyframes of the symmetric Chamfer distance (m^2)."""
    if len(predicted) != len(observed) or not np.allclose(predicted.times, observed.times, rtol=0, atol=1e-9):
        raise ValueError(
            f"keyframe grids differ: {len(predicted)} frames vs {len(observed)} frames"
        )
    return float(np.mean([chamfer(p, o) for p, o in zip(predicted.frames, observed.frames)]))


def estimate_v0(observed: Trajectory, n_pre: int = 3, gravity=DEFAULT_GRAVITY) -> np.ndarray:
    """Least-squares initial velocity from the centroid of the first ``n_pre`` frames.

    Fits ``c(t) = c(0) + v0 t + g t^2 / 2``, anchored at the first centroid.
    """
    if n_pre < 2:
        raise ValueError(f"need at least 2 frames for the velocity fit, got n_pre={n_pre}")
    if n_pre > len(observed):
        raise ValueError(f"n_pre={n_pre} exceeds the {len(observed)} available frames")
    c = observed.centroids()[:n_pre]
    t = observed.times[:n_pre] - observed.times[0]
    g = np.asarray(gravity, dtype=np.float64)
    resid = c - c[0] - 0.5 * g[None, :] * t[:, None] ** 2
    return (t[:, None] * resid).sum(axis=0) / np.sum(t * t)


def substep_schedule(loss_history: Sequence[float], n_t: int, config: IdentConfig) -> int:
    """Double ``n_t`` (up to the cap) once the loss stops improving over a full window."""
    window = config.plateau_window
    if n_t >= config.n_t_max or len(loss_history) < window:
        return n_t
    old, new = loss_history[-window], loss_history[-1]
    improvement = (old - new) / abs(old) if old != 0 else 0.0
    if improvement < config.plateau_threshold:
        return min(n_t * config.n_t_growth, config.n_t_max)
    return n_t


class Adam:
    def __init__(self, lr: np.ndarray, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = np.asarray(lr, dtype=np.float64)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros_like(self.lr)
        self.v = np.zeros_like(self.lr)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class IdentResult:
    params: PhysicalParams
    history: List[Tuple[int, float, int]] = field(default_factory=list)
    best_loss: float = np.inf
    best_iteration: int = -1
    n_t: int = 1

    @property
    def losses(self) -> np.ndarray:
        return np.array([h[1] for h in self.history])


def _learning_rates(params: PhysicalParams, config: IdentConfig) -> np.ndarray:
    n = len(params.log_k)
    lr = [np.full(3, config.lr_v0 if config.refine_v0 else 0.0),
          np.full(n, config.lr_log_k), [config.lr_kappa]]
    if params.boundary is not None:
        lr.append([config.lr_boundary if config.learn_ground_height else 0.0, config.lr_boundary])
    return np.concatenate(lr)


def identify(anchors, topology: SpringTopology, observed: Trajectory, config: Optional[IdentConfig] = None,
             binding: Optional[BindingTable] = None, history_path=None) -> IdentResult:
    """Fit physical parameters to ``observed`` and return the best-loss iterate.

    The observed clouds are compared with the anchors, or with the
    IDW-interpolated kernels when a ``binding`` is given. ``config.single_k``
    ties every anchor to one shared stiffness.
    """
    config = config or IdentConfig()
    if len(observed) < 2:
        raise ValueError("identification needs at least 2 observed keyframes")
    pos = anchors.positions if isinstance(anchors, AnchorSystem) else np.asarray(anchors, dtype=np.float64)
    if len(pos) != topology.n_anchors:
        raise ValueError("topology was built for a different anchor set")

    v0 = estimate_v0(observed, min(config.n_pre, len(observed)), config.gravity)
    params = config.initial_params(len(pos), v0)
    spec = LossSpec(kind=config.loss_kind, binding=binding)
    n = len(pos)
    lr = _learning_rates(params, config)
    opt = Adam(lr, config.beta1, config.beta2, config.adam_eps)
    frozen = lr == 0.0

    result = IdentResult(params.copy(), n_t=config.n_t_init)
    n_t = config.n_t_init
    window: List[float] = []
    x = pack(params)

    def rescore(new_n_t):
        # losses at different n_t are different objectives, so the incumbent is re-measured
        if result.best_iteration < 0:
            return
        try:
            result.best_loss = rollout_loss(pos, topology, result.params, observed, spec, new_n_t)
        except SimulationError:
            result.best_loss = np.inf
        result.n_t = new_n_t

    for it in range(config.iterations):
        params = unpack(x, params)
        while True:
            try:
                loss, grad = grad_rollout(pos, topology, params, observed, spec, n_t=n_t)
                break
            except SimulationError as err:
                # an explicit step that blows up usually just needs a smaller dt
                if n_t >= config.n_t_max:
                    raise IdentificationError(f"simulation diverged at iteration {it}: {err}") from err
                log.warning("iter %d: unstable at n_t=%d, doubling", it, n_t)
                n_t, window = min(n_t * config.n_t_growth, config.n_t_max), []
                rescore(n_t)
        if not np.isfinite(loss):
            raise IdentificationError(f"loss diverged (non-finite) at iteration {it}")
        result.history.append((it, loss, n_t))
        if loss < result.best_loss:
            result.best_loss, result.best_iteration = loss, it
            result.params, result.n_t = params.copy(), n_t
        g = grad.as_vector()
        if config.single_k:
            g[3:3 + n] = g[3:3 + n].sum()
        g[frozen] = 0.0
        if not np.all(np.isfinite(g)):
            raise IdentificationError(f"non-finite gradient at iteration {it}")
        if config.normalize_grad:
            norm = np.linalg.norm(g)
            if norm > 0:
                g = g / norm
        x = opt.step(x, g)
        log.debug("iter %d loss %.6e n_t %d", it, loss, n_t)

        window.append(loss)
        new_n_t = substep_schedule(window, n_t, config)
        if new_n_t != n_t:
            log.info("iter %d: loss plateau, n_t %d -> %d", it, n_t, new_n_t)
            n_t, window = new_n_t, []
            rescore(n_t)

    if history_path is not None:
        write_loss_history(result.history, history_path)
    return result


def write_loss_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "loss", "n_t"])
        for it, loss, n_t in history:
            writer.writerow([it, repr(float(loss)), n_t])
