"""Human grasp retargeting and the eigengrasp PCA basis.

Fingertip traces (index, middle, ring, thumb stacked into 12-D palm-frame
points) are retargeted to 16-D hand joint trajectories by optimizing a
blended tracking/closure loss with Adam over unconstrained variables that a
differentiable saturation keeps inside joint limits. PCA over the resulting
joint dataset yields the 5-D hand action basis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigurationError, OptimizationError
from .kinematics import KinematicModel, _fk_kernel, _points_kernel

FINGERTIP_POINTS = ("tip_index", "tip_middle", "tip_ring", "tip_thumb")

Q_REG_PRECISION = np.array([0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1.0, 0.75, 0, 0], dtype=float)
Q_REG_POWER = np.array([0, 1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1.0, 0.75, 0, 0], dtype=float)


@dataclass
class HumanGraspTrace:
    """Sequence of stacked fingertip points (n×12, palm frame, meters)."""

    points: np.ndarray
    grip_type: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 12 or self.points.shape[0] < 2:
            raise ConfigurationError("trace must be (n>=2, 12)")
        if not np.isfinite(self.points).all():
            raise ConfigurationError("trace must be finite")
        if self.grip_type not in ("power", "precision"):
            raise ConfigurationError(f"unknown grip type {self.grip_type!r}")


@dataclass
class AdamParams:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 200


@dataclass
class RetargetConfig:
    scale: float = 1.6  # human-to-robot fingertip scaling
    reg_weight: float = 0.01
    q_reg_precision: np.ndarray = field(default_factory=lambda: Q_REG_PRECISION.copy())
    q_reg_power: np.ndarray = field(default_factory=lambda: Q_REG_POWER.copy())
    focal_precision: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.05, 0.16]))
    focal_power: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.03, 0.07]))
    adam: AdamParams = field(default_factory=AdamParams)
    fd_step: float = 1e-5
    fingertip_points: tuple = FINGERTIP_POINTS

    def q_reg(self, grip_type: str) -> np.ndarray:
        return self.q_reg_power if grip_type == "power" else self.q_reg_precision

    def focal(self, grip_type: str) -> np.ndarray:
        return self.focal_power if grip_type == "power" else self.focal_precision


def saturate(q_free, lower, upper) -> np.ndarray:
    """Map unconstrained values strictly inside (q̲, q̄), smoothly."""
    q_free = np.asarray(q_free, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    return 0.5 * (np.tanh(q_free) + 1.0) * (upper - lower) + lower


def saturate_derivative(q_free, lower, upper) -> np.ndarray:
    """Elementwise d(saturate)/dq_free."""
    t = np.tanh(np.asarray(q_free, dtype=np.float64))
    return 0.5 * (1.0 - t * t) * (np.asarray(upper, float) - np.asarray(lower, float))


@njit(cache=True)
def _loss_batch(
    qf_batch,
    lower,
    upper,
    parents,
    origin_rot,
    origin_xyz,
    axis_skew,
    axis_skew2,
    tip_frames,
    tip_offsets,
    x_track,
    x_close,
    gamma,
    lam,
    q_reg,
    out,
):
    n = lower.shape[0]
    n_tips = tip_frames.shape[0]
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    tips = np.empty((n_tips, 3))
    for b in range(qf_batch.shape[0]):
        q_r = np.empty(n)
        for j in range(n):
            q_r[j] = 0.5 * (np.tanh(qf_batch[b, j]) + 1.0) * (upper[j] - lower[j]) + lower[j]
        _fk_kernel(parents, origin_rot, origin_xyz, axis_skew, axis_skew2, q_r, rot, pos)
        _points_kernel(rot, pos, tip_frames, tip_offsets, tips)
        track = 0.0
        close = 0.0
        for m in range(n_tips):
            for c in range(3):
                v = tips[m, c] - x_track[3 * m + c]
                track += v * v
                w = tips[m, c] - x_close[3 * m + c]
                close += w * w
        reg = 0.0
        for j in range(n):
            v = q_r[j] - q_reg[j]
            reg += v * v
        out[b] = gamma * track + (1.0 - gamma) * close + lam * np.sqrt(reg)


class _LossEvaluator:
    """Batched loss/gradient evaluation bound to one hand model."""

    def __init__(self, hand_model: KinematicModel, cfg: RetargetConfig):
        if hand_model.dof_count != 16:
            raise ConfigurationError("retargeting expects a 16-DOF hand model")
        self.model = hand_model
        self.cfg = cfg
        self.tip_frames, self.tip_offsets = hand_model.resolve_points(cfg.fingertip_points)

    def loss(self, q_free, x_h, gamma, grip_type) -> float:
        return self.loss_many(q_free[None, :], x_h, gamma, grip_type)[0]

    def loss_many(self, qf_batch, x_h, gamma, grip_type) -> np.ndarray:
        m = self.model
        cfg = self.cfg
        x_track = cfg.scale * np.asarray(x_h, dtype=np.float64)
        x_close = np.tile(cfg.focal(grip_type), 4)
        out = np.empty(qf_batch.shape[0])
        _loss_batch(
            np.ascontiguousarray(qf_batch, dtype=np.float64),
            m.lower_limits, m.upper_limits,
            m.parents, m.origin_rot, m.origin_xyz, m.axis_skew, m.axis_skew2,
            self.tip_frames, self.tip_offsets,
            x_track, x_close, float(gamma), cfg.reg_weight, cfg.q_reg(grip_type),
            out,
        )
        return out

    def gradient(self, q_free, x_h, gamma, grip_type) -> np.ndarray:
        h = self.cfg.fd_step
        n = q_free.shape[0]
        batch = np.repeat(q_free[None, :], 2 * n, axis=0)
        for j in range(n):
            batch[2 * j, j] += h
            batch[2 * j + 1, j] -= h
        vals = self.loss_many(batch, x_h, gamma, grip_type)
        return (vals[0::2] - vals[1::2]) / (2.0 * h)


def retarget_loss(
    q_free, x_h, gamma, cfg: RetargetConfig, hand_model: KinematicModel, grip_type: str = "precision"
) -> float:
    """Blended tracking/closure loss at one unconstrained hand configuration."""
    if not (0.0 <= gamma <= 1.0):
        raise ConfigurationError("gamma must be in [0, 1]")
    x_h = np.asarray(x_h, dtype=np.float64)
    if x_h.shape != (12,):
        raise ConfigurationError("x_h must stack 4 fingertip points into 12 values")
    return _LossEvaluator(hand_model, cfg).loss(
        np.asarray(q_free, dtype=np.float64), x_h, gamma, grip_type
    )


@dataclass
class AdamResult:
    x: np.ndarray
    loss: float
    iterations: int


def adam_minimize(loss_fn, x0, params: AdamParams | None = None, grad_fn=None, fd_step: float = 1e-5) -> AdamResult:
    """Adam with bias correction over a fixed iteration budget.

    Gradients default to central finite differences of `loss_fn`; the best
    iterate seen (by loss) is returned.
    """
    params = params or AdamParams()
    x = np.asarray(x0, dtype=np.float64).copy()
    n = x.shape[0]

    if grad_fn is None:
        def grad_fn(z):
            g = np.empty(n)
            for j in range(n):
                zp = z.copy()
                zm = z.copy()
                zp[j] += fd_step
                zm[j] -= fd_step
                g[j] = (loss_fn(zp) - loss_fn(zm)) / (2.0 * fd_step)
            return g

    m = np.zeros(n)
    v = np.zeros(n)
    best_x = x.copy()
    best_loss = float(loss_fn(x))
    if not np.isfinite(best_loss):
        raise OptimizationError("non-finite loss at the initial point")
    for t in range(1, params.iterations + 1):
        g = grad_fn(x)
        if not np.isfinite(g).all():
            raise OptimizationError(f"non-finite gradient at iteration {t}")
        m = params.beta1 * m + (1.0 - params.beta1) * g
        v = params.beta2 * v + (1.0 - params.beta2) * g * g
        m_hat = m / (1.0 - params.beta1**t)
        v_hat = v / (1.0 - params.beta2**t)
        x = x - params.lr * m_hat / (np.sqrt(v_hat) + params.eps)
        loss = float(loss_fn(x))
        if not np.isfinite(loss):
            raise OptimizationError(f"non-finite loss at iteration {t}")
        if loss < best_loss:
            best_loss = loss
            best_x = x.copy()
    return AdamResult(best_x, best_loss, params.iterations)


def retarget_trace(trace: HumanGraspTrace, hand_model: KinematicModel, cfg: RetargetConfig | None = None) -> np.ndarray:
    """Joint trajectory (n×16) for one trace, warm-started point to point.

    The blend γ = 1 − (i+1)/n moves the objective from tracking the scaled
    human fingertips to closing on the grip-type focal point.
    """
    cfg = cfg or RetargetConfig()
    ev = _LossEvaluator(hand_model, cfg)
    n_pts = trace.points.shape[0]
    q_free = np.zeros(16)
    out = np.empty((n_pts, 16))
    for i in range(n_pts):
        gamma = 1.0 - (i + 1) / n_pts
        x_h = trace.points[i]

        result = adam_minimize(
            lambda z: float(ev.loss(z, x_h, gamma, trace.grip_type)),
            q_free,
            cfg.adam,
            grad_fn=lambda z: ev.gradient(z, x_h, gamma, trace.grip_type),
        )
        q_free = result.x
        out[i] = saturate(q_free, hand_model.lower_limits, hand_model.upper_limits)
    return out


@dataclass
class PcaBasis:
    """Top-k principal directions of the hand-joint dataset (rows of A)."""

    components: np.ndarray  # (k, 16), orthonormal rows
    mean: np.ndarray  # (16,)
    eigenvalues: np.ndarray  # (16,), descending
    explained_variance_ratio: float

    def project(self, q_hand) -> np.ndarray:
        return self.components @ (np.asarray(q_hand, float) - self.mean)

    def reconstruct(self, z) -> np.ndarray:
        return self.components.T @ np.asarray(z, float) + self.mean

    def save(self, path):
        doc = {
            "components": self.components.tolist(),
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio,
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)

    @classmethod
    def load(cls, path) -> "PcaBasis":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            np.asarray(doc["components"], dtype=np.float64),
            np.asarray(doc["mean"], dtype=np.float64),
            np.asarray(doc["eigenvalues"], dtype=np.float64),
            float(doc["explained_variance_ratio"]),
        )


def fit_pca(dataset, k: int = 5) -> PcaBasis:
    """Mean-centered covariance eigendecomposition, top-k rows.

    Eigenvalues use the sample covariance (N−1 normalization) and are sorted
    descending; component signs are fixed so each row's largest-magnitude
    entry is positive.
    """
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError("dataset must be (N, d)")
    n, d = x.shape
    if n < k:
        raise ConfigurationError(f"need at least k={k} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    comps = evecs[:, :k].T.copy()
    for r in range(k):
        lead = np.argmax(np.abs(comps[r]))
        if comps[r, lead] < 0:
            comps[r] = -comps[r]
    total = evals.sum()
    ratio = float(evals[:k].sum() / total) if total > 0 else 1.0
    return PcaBasis(comps, mean, evals, ratio)


# --- synthetic trace generation -------------------------------------------
# Human-scale fingertip keyframes in the palm frame; roughly the bundled
# robot hand geometry divided by the retargeting scale.

_OPEN_TIPS = np.array(
    [
        [0.028, 0.004, 0.150],
        [0.000, 0.004, 0.155],
        [-0.028, 0.004, 0.150],
        [0.037, -0.091, 0.072],
    ]
)
_CLOSED_POWER = np.array(
    [
        [0.028, -0.054, 0.050],
        [0.000, -0.054, 0.051],
        [-0.028, -0.054, 0.050],
        [-0.027, -0.059, 0.061],
    ]
)
_CLOSED_PRECISION = np.array(
    [
        [0.012, -0.034, 0.104],
        [0.002, -0.036, 0.106],
        [-0.010, -0.034, 0.104],
        [-0.012, -0.044, 0.088],
    ]
)


def synthetic_traces(seed: int, n_traces: int = 12, n_points: int = 16) -> list[HumanGraspTrace]:
    """Parametric open→close fingertip arcs with per-trace jitter."""
    rng = np.random.default_rng(seed)
    traces = []
    for t in range(n_traces):
        grip = "power" if t % 2 == 0 else "precision"
        closed = _CLOSED_POWER if grip == "power" else _CLOSED_PRECISION
        amp = rng.uniform(0.85, 1.1)
        phase = rng.uniform(0.0, 0.25, size=4)
        wobble = rng.uniform(0.001, 0.004)
        pts = np.empty((n_points, 12))
        for i in range(n_points):
            s = i / (n_points - 1)
            blend = np.clip(amp * (3 * s**2 - 2 * s**3) + phase * s * (1 - s), 0.0, 1.0)
            tips = (1 - blend)[:, None] * _OPEN_TIPS + blend[:, None] * closed
            tips = tips + wobble * rng.standard_normal((4, 3))
            pts[i] = tips.reshape(-1)
        traces.append(HumanGraspTrace(pts, grip))
    return traces


def save_trace(trace: HumanGraspTrace, path):
    with open(path, "w") as f:
        json.dump({"grip_type": trace.grip_type, "points": trace.points.tolist()}, f)


def load_trace(path) -> HumanGraspTrace:
    with open(path) as f:
        doc = json.load(f)
    return HumanGraspTrace(np.asarray(doc["points"], dtype=np.float64), doc["grip_type"])


def load_traces(directory) -> list[HumanGraspTrace]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise ConfigurationError(f"no trace files in {directory}")
    return [load_trace(p) for p in paths]


def save_dataset(dataset: np.ndarray, path):
    dataset = np.asarray(dataset, dtype=np.float64)
    with open(path, "w") as f:
        f.write(",".join(f"q_{i}" for i in range(dataset.shape[1])) + "\n")
        for row in dataset:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline()
        del header
        rows = [[float(v) for v in line.strip().split(",")] for line in f if line.strip()]
    return np.asarray(rows, dtype=np.float64)
