"""Initial-state sampling, wrench perturbations, pose noise, and domain
randomization. All samplers draw from a caller-owned numpy Generator, so a
fixed seed reproduces every draw sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import collision
from ..errors import ConfigurationError, SamplingError
from ..rotations import quat_multiply, quat_normalize, random_quat, rpy_to_quat

UPRIGHT_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class InitialStateBounds:
    """Object/table-frame sampling box and robot perturbation ranges."""

    pos_low: np.ndarray = field(default_factory=lambda: np.array([-0.18125, -0.29, 0.05]))
    pos_high: np.ndarray = field(default_factory=lambda: np.array([0.18125, 0.29, 0.051]))
    upright_prob: float = 0.5
    joint_noise_frac: float = 0.10  # of each joint's limit range
    vel_range: float = 0.1  # rad/s
    max_tries: int = 1000


@dataclass
class InitialSample:
    object_pos: np.ndarray
    object_quat: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tries: int


def _robot_in_collision(model, q, world, self_pairs) -> bool:
    queries, _ = collision.query_all(model, q, world, self_pairs)
    for per_sphere in queries:
        for qr in per_sphere:
            if qr.distance < 0.0:
                return True
    return False


def sample_initial_state(
    rng: np.random.Generator,
    model,
    world,
    bounds: InitialStateBounds | None = None,
    default_q=None,
    self_pairs=(),
) -> InitialSample:
    """Rejection-sample a collision-free initial robot state + object pose.

    The object position is uniform in the bounds box; orientation is upright
    with probability 0.5, else uniform. Joints start at the default pose
    plus uniform noise of ±10% of each limit range (clamped to the limits),
    velocities uniform in ±vel_range.
    """
    bounds = bounds or InitialStateBounds()
    n = model.dof_count
    if default_q is None:
        default_q = 0.5 * (model.lower_limits + model.upper_limits)
    default_q = np.asarray(default_q, dtype=np.float64)
    if default_q.shape != (n,):
        raise ConfigurationError(f"default_q must have shape ({n},)")
    limit_range = model.upper_limits - model.lower_limits

    for attempt in range(1, bounds.max_tries + 1):
        object_pos = rng.uniform(bounds.pos_low, bounds.pos_high)
        if rng.random() < bounds.upright_prob:
            object_quat = UPRIGHT_QUAT.copy()
        else:
            object_quat = random_quat(rng)
        noise = rng.uniform(-1.0, 1.0, size=n) * bounds.joint_noise_frac * limit_range
        q = np.clip(default_q + noise, model.lower_limits, model.upper_limits)
        qd = rng.uniform(-bounds.vel_range, bounds.vel_range, size=n)
        if not _robot_in_collision(model, q, world, self_pairs):
            return InitialSample(object_pos, object_quat, q, qd, attempt)
    raise SamplingError(f"no collision-free initial state in {bounds.max_tries} tries")


@dataclass
class WrenchConfig:
    f_scale: float = 50.0
    tau_scale: float = 100.0
    probability: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise ConfigurationError("wrench probability must be in [0, 1]")


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    norm = np.linalg.norm(v)
    while norm < 1e-12:
        v = rng.standard_normal(3)
        norm = np.linalg.norm(v)
    return v / norm


def sample_wrench(rng: np.random.Generator, mass: float, inertia, cfg: WrenchConfig | None = None):
    """With probability p: f = f_scale·m·u_f and τ = τ_scale·I·u_τ, else None."""
    cfg = cfg or WrenchConfig()
    if rng.random() >= cfg.probability:
        return None
    u_f = _unit_vector(rng)
    u_tau = _unit_vector(rng)
    inertia = np.asarray(inertia, dtype=np.float64)
    force = cfg.f_scale * float(mass) * u_f
    torque = cfg.tau_scale * (inertia @ u_tau)
    return force, torque


@dataclass
class PoseNoiseConfig:
    sigma_xyz_uncorr: float = 0.02
    sigma_xyz_corr: float = 0.02
    sigma_rpy_uncorr: float = 0.1
    sigma_rpy_corr: float = 0.1


@dataclass
class CorrelatedPoseNoise:
    """Episode-constant draw; redraw on reset only."""

    xyz: np.ndarray
    rpy_quat: np.ndarray


def sample_correlated_pose_noise(rng: np.random.Generator, cfg: PoseNoiseConfig | None = None) -> CorrelatedPoseNoise:
    cfg = cfg or PoseNoiseConfig()
    xyz = cfg.sigma_xyz_corr * rng.standard_normal(3)
    rpy = cfg.sigma_rpy_corr * rng.standard_normal(3)
    return CorrelatedPoseNoise(xyz, rpy_to_quat(rpy))


def apply_pose_noise(
    position,
    quat,
    correlated: CorrelatedPoseNoise,
    rng: np.random.Generator,
    cfg: PoseNoiseConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Noisy observed pose: additive position noise and quaternion-composed
    orientation noise (per-step uncorrelated plus the episode draw)."""
    cfg = cfg or PoseNoiseConfig()
    position = np.asarray(position, dtype=np.float64)
    noisy_pos = position + correlated.xyz + cfg.sigma_xyz_uncorr * rng.standard_normal(3)
    rpy_uncorr = cfg.sigma_rpy_uncorr * rng.standard_normal(3)
    q_uncorr = rpy_to_quat(rpy_uncorr)
    noisy_quat = quat_multiply(correlated.rpy_quat, quat_multiply(q_uncorr, np.asarray(quat, float)))
    return noisy_pos, quat_normalize(noisy_quat)


# Randomization table: (group, parameter, distribution, operation, range).
# Gaussian rows follow the additive convention mean=low, std=high.
DEFAULT_DR_TABLE = (
    {"group": "robot", "parameter": "mass", "distribution": "uniform", "operation": "scaling", "range": (0.3, 3.0)},
    {"group": "robot", "parameter": "friction", "distribution": "uniform", "operation": "scaling", "range": (0.5, 1.1)},
    {"group": "robot", "parameter": "restitution", "distribution": "uniform", "operation": "additive", "range": (0.0, 0.4)},
    {"group": "robot", "parameter": "joint_stiffness", "distribution": "loguniform", "operation": "scaling", "range": (0.5, 2.0)},
    {"group": "robot", "parameter": "joint_damping", "distribution": "loguniform", "operation": "scaling", "range": (0.3, 3.0)},
    {"group": "object", "parameter": "mass", "distribution": "uniform", "operation": "scaling", "range": (0.3, 3.0)},
    {"group": "object", "parameter": "friction", "distribution": "uniform", "operation": "scaling", "range": (0.5, 1.1)},
    {"group": "object", "parameter": "restitution", "distribution": "uniform", "operation": "additive", "range": (0.0, 0.4)},
    {"group": "table", "parameter": "friction", "distribution": "uniform", "operation": "scaling", "range": (0.5, 1.1)},
    {"group": "table", "parameter": "restitution", "distribution": "uniform", "operation": "additive", "range": (0.0, 0.4)},
    {"group": "observation", "parameter": "uncorrelated_noise", "distribution": "gaussian", "operation": "additive", "range": (0.0, 0.005)},
    {"group": "observation", "parameter": "correlated_noise", "distribution": "gaussian", "operation": "additive", "range": (0.0, 0.01)},
    {"group": "action", "parameter": "uncorrelated_noise", "distribution": "gaussian", "operation": "additive", "range": (0.0, 0.05)},
    {"group": "action", "parameter": "correlated_noise", "distribution": "gaussian", "operation": "additive", "range": (0.0, 0.02)},
    {"group": "environment", "parameter": "gravity", "distribution": "gaussian", "operation": "additive", "range": (0.0, 0.5)},
)


def sample_domain_randomization(rng: np.random.Generator, spec=DEFAULT_DR_TABLE) -> dict:
    """Draw one value per table row, grouped as {group: {parameter: value}}."""
    out: dict[str, dict[str, float]] = {}
    for row in spec:
        lo, hi = row["range"]
        dist = row["distribution"]
        if dist == "uniform":
            value = rng.uniform(lo, hi)
        elif dist == "loguniform":
            if lo <= 0 or hi <= 0 or hi < lo:
                raise ConfigurationError(f"bad loguniform range {row['range']}")
            value = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        elif dist == "gaussian":
            value = float(lo + hi * rng.standard_normal())
        else:
            raise ConfigurationError(f"unknown distribution {dist!r}")
        out.setdefault(row["group"], {})[row["parameter"]] = float(value)
    return out
