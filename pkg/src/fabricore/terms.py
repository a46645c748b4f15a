"""Fabric term catalog: each term yields a task-space priority metric and a
desired acceleration.

Geometric terms (collision geometry, posture) are homogeneous of degree two
in velocity and shape speed-invariant paths; forcing terms (collision
boundary, attractors, joint-limit repulsion) carry damping and drive the
system toward or away from set points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

EPS_DEGENERATE = 1e-9
EPS_LIMIT = 1e-6


@dataclass
class FabricTermOutput:
    """Symmetric PSD metric M (k×k) and desired acceleration ẍ_des (k)."""

    metric: np.ndarray
    accel: np.ndarray

    @classmethod
    def zero(cls, k: int) -> "FabricTermOutput":
        return cls(np.zeros((k, k)), np.zeros(k))


def _require_positive(cfg, names):
    for name in names:
        v = getattr(cfg, name)
        if np.any(np.asarray(v) <= 0):
            raise ConfigurationError(f"{type(cfg).__name__}.{name} must be > 0")


@dataclass
class CollisionTermConfig:
    """Gains for the collision geometric/forcing term pair.

    Defaults are tuned for the desk models, not reference values.
    """

    k_g: float = 1.0
    k_f: float = 5.0
    b: float = 2.5
    beta: float = 0.5
    alpha1: float = 20.0
    alpha2: float = 0.1
    d_min: float = 0.015
    d_cutoff: float = 0.5  # queries farther than this are dropped

    def __post_init__(self):
        _require_positive(self, ["k_g", "k_f", "b", "beta", "alpha1", "alpha2", "d_min", "d_cutoff"])


@dataclass
class AttractionConfig:
    m: float = 1.0  # isotropic task-space mass
    k_a: float = 40.0
    alpha_a: float = 10.0
    b: float = 10.0  # damping, used by the forced variant only

    def __post_init__(self):
        _require_positive(self, ["m", "k_a", "alpha_a", "b"])


@dataclass
class JointLimitConfig:
    k_b: float = 2.0
    g: np.ndarray = field(default_factory=lambda: np.full(1, 4.0))  # repulsion accel, per joint
    b: float = 2.5

    def __post_init__(self):
        self.g = np.atleast_1d(np.asarray(self.g, dtype=np.float64))
        _require_positive(self, ["k_b", "g", "b"])

    def g_vector(self, n: int) -> np.ndarray:
        if self.g.shape == (1,):
            return np.full(n, self.g[0])
        if self.g.shape != (n,):
            raise ConfigurationError(f"joint-limit g must have length {n}")
        return self.g


def velocity_gate(v: np.ndarray, alpha1: float, alpha2: float) -> np.ndarray:
    """Smooth gate in [0, 1], high when the sphere moves toward the body."""
    return 0.5 * (np.tanh(-alpha1 * (np.asarray(v) - alpha2)) + 1.0)


def _collision_base(queries, xd, cfg: CollisionTermConfig):
    """Shared direction/metric construction over the retained queries.

    Returns (base direction ẍ_b, metric M, d̃) with M already normalized and
    scaled; ẍ_b is unnormalized and may be ~0 under symmetry cancellation.
    """
    if not queries:
        raise ConfigurationError("collision term needs at least one query")
    xd = np.asarray(xd, dtype=np.float64)
    retained = [qr for qr in queries if qr.bounded_distance <= cfg.d_cutoff]
    if not retained:
        return None
    d_lb = np.array([qr.bounded_distance for qr in retained])
    nhat = np.stack([qr.direction for qr in retained])
    d_tilde = d_lb.min()
    xb = -(nhat / d_lb[:, None]).sum(axis=0)
    v = -(nhat @ xd)
    gates = velocity_gate(v, cfg.alpha1, cfg.alpha2)
    m_b = np.einsum("i,ij,ik->jk", gates / d_lb, nhat, nhat)
    fro = np.linalg.norm(m_b)
    if fro < EPS_DEGENERATE:
        metric = np.zeros((3, 3))
    else:
        metric = (cfg.beta / d_tilde**2) * m_b / fro
    return xb, metric, d_tilde


def collision_geometric(queries, xd, cfg: CollisionTermConfig) -> FabricTermOutput:
    """Speed-invariant avoidance: ẍ = k_g ‖ẋ‖² ẍ̂_b with the gated metric."""
    base = _collision_base(queries, xd, cfg)
    if base is None:
        return FabricTermOutput.zero(3)
    xb, metric, _ = base
    norm_xb = np.linalg.norm(xb)
    if norm_xb < EPS_DEGENERATE:
        return FabricTermOutput.zero(3)
    xd = np.asarray(xd, dtype=np.float64)
    accel = cfg.k_g * float(xd @ xd) * xb / norm_xb
    return FabricTermOutput(metric, accel)


def collision_forcing(queries, xd, cfg: CollisionTermConfig) -> FabricTermOutput:
    """Boundary repulsion: ẍ = k_f ẍ̂_b − bẋ (damping-only when degenerate)."""
    base = _collision_base(queries, xd, cfg)
    if base is None:
        return FabricTermOutput.zero(3)
    xb, metric, _ = base
    xd = np.asarray(xd, dtype=np.float64)
    norm_xb = np.linalg.norm(xb)
    if norm_xb < EPS_DEGENERATE:
        return FabricTermOutput(metric, -cfg.b * xd)
    return FabricTermOutput(metric, cfg.k_f * xb / norm_xb - cfg.b * xd)


def joint_limit_repulsion(x, xd, cfg: JointLimitConfig) -> FabricTermOutput:
    """Repulsion in a joint-limit distance space (one map per upper/lower).

    The metric activates per joint only while moving toward the limit and
    grows as 1/x; the acceleration pushes away at g with damping b.
    """
    x = np.asarray(x, dtype=np.float64).copy()
    xd = np.asarray(xd, dtype=np.float64)
    n = x.shape[0]
    tiny = x <= EPS_LIMIT
    if tiny.any():
        logger.warning("joint-limit distance clamped at %g for %d joints", EPS_LIMIT, tiny.sum())
        x[tiny] = EPS_LIMIT
    gate = np.maximum(-np.sign(xd), 0.0)
    metric = np.diag(gate * cfg.k_b / x)
    accel = cfg.g_vector(n) - cfg.b * xd
    return FabricTermOutput(metric, accel)


def attraction_forced(x, xd, target, cfg: AttractionConfig) -> FabricTermOutput:
    """Damped tanh-saturated attractor; drive magnitude is bounded by k_a."""
    x = np.asarray(x, dtype=np.float64)
    xd = np.asarray(xd, dtype=np.float64)
    delta = x - np.asarray(target, dtype=np.float64)
    dist = np.linalg.norm(delta)
    metric = cfg.m * np.eye(x.shape[0])
    if dist < EPS_DEGENERATE:
        return FabricTermOutput(metric, -cfg.b * xd)
    accel = -cfg.k_a * np.tanh(cfg.alpha_a * dist) * delta / dist - cfg.b * xd
    return FabricTermOutput(metric, accel)


def attraction_geometric_hd2(x, xd, x_g, cfg: AttractionConfig) -> FabricTermOutput:
    """Undamped HD2 attractor: ẍ = −k_a‖ẋ‖² tanh(α_a‖x−x_g‖) (x−x_g)/‖x−x_g‖."""
    x = np.asarray(x, dtype=np.float64)
    xd = np.asarray(xd, dtype=np.float64)
    delta = x - np.asarray(x_g, dtype=np.float64)
    dist = np.linalg.norm(delta)
    metric = cfg.m * np.eye(x.shape[0])
    if dist < EPS_DEGENERATE:
        return FabricTermOutput(metric, np.zeros(x.shape[0]))
    accel = -cfg.k_a * float(xd @ xd) * np.tanh(cfg.alpha_a * dist) * delta / dist
    return FabricTermOutput(metric, accel)


def cspace_damping(qd, b_c: float) -> FabricTermOutput:
    """Identity-map damping term: M = I, ẍ = −b_c q̇."""
    if b_c < 0:
        raise ConfigurationError("cspace damping must be >= 0")
    qd = np.asarray(qd, dtype=np.float64)
    return FabricTermOutput(np.eye(qd.shape[0]), -b_c * qd)
