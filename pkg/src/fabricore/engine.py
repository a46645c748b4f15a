"""Fabric engine: composes the term catalog by metric-weighted pullback,
enforces acceleration/jerk limits through the closed-form α-scaling, and
integrates the artificial system at 60 Hz under a 15 Hz action interface.

The integrated state (q_f, q̇_f, q̈_f) is the PD target stream contract:
q_f goes out as joint position targets with velocity targets pinned to 0.

The hot path is fused into numba kernels so batched RL-style stepping and
the real-time loop budget hold on a single core; the public catalog in
`terms`/`taskmaps` defines the same math compositionally and the test suite
pins the two together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import taskmaps
from .collision import CollisionWorld, _obstacle_distance, _sphere_pair_distance
from .errors import BatchEngineFault, ConfigurationError, EngineFault
from .kinematics import (
    CURVATURE_EPS,
    KinematicModel,
    _fk_kernel,
    _jacobian_kernel,
    _points_kernel,
    _world_axes_kernel,
)
from .terms import (
    EPS_DEGENERATE,
    EPS_LIMIT,
    AttractionConfig,
    CollisionTermConfig,
    JointLimitConfig,
)

logger = logging.getLogger(__name__)

MODE_PCA_POSE = "pca_pose"
MODE_CSPACE = "cspace"

# parameter-vector layout for the fused kernels
_P_KG, _P_KF, _P_BCOL, _P_BETA, _P_A1, _P_A2, _P_DMIN, _P_DCUT = range(8)
_P_M_PCA, _P_KA_PCA, _P_AA_PCA, _P_B_PCA = range(8, 12)
_P_M_POSE, _P_KA_POSE, _P_AA_POSE, _P_B_POSE = range(12, 16)
_P_M_POST, _P_KA_POST, _P_AA_POST = range(16, 19)
_P_KB, _P_B_JL, _P_BC, _P_LAMBDA = range(19, 23)
_P_M_CS, _P_KA_CS, _P_AA_CS, _P_B_CS = range(23, 27)
_P_MODE = 27
_N_PARAMS = 28

_ST_OK = 0
_TERM_NAMES = {
    1: "collision",
    2: "joint_limit",
    3: "pca_attraction",
    4: "pose_attraction",
    5: "posture",
    6: "cspace",
    7: "resolve_solve",
}


@dataclass
class ActionCommand:
    """11-D action: palm position (m), palm Euler XYZ (rad), 5-D PCA target."""

    palm_pos: np.ndarray
    palm_rpy: np.ndarray
    pca: np.ndarray

    def __post_init__(self):
        self.palm_pos = np.asarray(self.palm_pos, dtype=np.float64)
        self.palm_rpy = np.asarray(self.palm_rpy, dtype=np.float64)
        self.pca = np.asarray(self.pca, dtype=np.float64)
        if self.palm_pos.shape != (3,) or self.palm_rpy.shape != (3,) or self.pca.shape != (5,):
            raise ConfigurationError("action must be (3,) palm position, (3,) rpy, (5,) pca")
        if not (
            np.isfinite(self.palm_pos).all()
            and np.isfinite(self.palm_rpy).all()
            and np.isfinite(self.pca).all()
        ):
            raise ConfigurationError("action must be finite")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.palm_pos, self.palm_rpy, self.pca])

    @classmethod
    def from_array(cls, a) -> "ActionCommand":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (11,):
            raise ConfigurationError(f"action array must have shape (11,), got {a.shape}")
        return cls(a[0:3], a[3:6], a[6:11])


@dataclass
class CspaceTarget:
    """Joint-position target for the cspace action-space variant."""

    q_target: np.ndarray

    def __post_init__(self):
        self.q_target = np.asarray(self.q_target, dtype=np.float64)
        if self.q_target.ndim != 1 or not np.isfinite(self.q_target).all():
            raise ConfigurationError("cspace target must be a finite vector")


@dataclass
class FabricState:
    """Artificial system state; q doubles as the PD position target."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray | None = None
    step_count: int = 0
    last_action: object = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.qd = np.asarray(self.qd, dtype=np.float64)
        if self.qdd is None:
            self.qdd = np.zeros_like(self.q)
        self.qdd = np.asarray(self.qdd, dtype=np.float64)
        if not (self.q.shape == self.qd.shape == self.qdd.shape):
            raise ConfigurationError("state vectors must share one shape")

    def copy(self) -> "FabricState":
        return FabricState(
            self.q.copy(), self.qd.copy(), self.qdd.copy(), self.step_count, self.last_action
        )


@dataclass
class StepInfo:
    min_dist: float  # smallest signed distance seen at the step's start state
    alpha: float  # largest α applied by the limiter in this step
    clamp_count: int  # joints clamped by the post-integration safety net
    limit_clamps: int  # joint-limit-map distance clamps (diagnostic)


@dataclass
class EngineConfig:
    dt: float = 1.0 / 60.0
    action_repeat: int = 4
    lambda_reg: float = 1e-6
    mode: str = MODE_PCA_POSE
    collision: CollisionTermConfig = field(default_factory=CollisionTermConfig)
    # attraction masses outweigh far-field collision forcing so commanded
    # poses are tracked tightly; barrier metrics still dominate near contact
    pca_attraction: AttractionConfig = field(default_factory=lambda: AttractionConfig(m=4.0, k_a=40.0))
    pose_attraction: AttractionConfig = field(default_factory=lambda: AttractionConfig(m=8.0, k_a=40.0))
    posture: AttractionConfig = field(default_factory=lambda: AttractionConfig(k_a=1.0))
    cspace_attraction: AttractionConfig = field(default_factory=lambda: AttractionConfig(m=4.0, k_a=40.0))
    joint_limit: JointLimitConfig = field(default_factory=JointLimitConfig)
    cspace_damping: float = 2.0
    palm_frame: str | int | None = None
    palm_offsets: np.ndarray | None = None
    pca_components: np.ndarray | None = None  # (5, 16) hand basis
    hand_offset: int = 7
    posture_target: np.ndarray | None = None  # defaults to the limit midpoints
    self_pairs: tuple = ()
    bisect_tol: float = 1e-4
    bisect_max_iter: int = 60
    alpha_max: float = 1e8

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.action_repeat < 1:
            raise ConfigurationError("action_repeat must be >= 1")
        if self.mode not in (MODE_PCA_POSE, MODE_CSPACE):
            raise ConfigurationError(f"unknown action-space mode {self.mode!r}")


def effective_accel_limits(accel_limits, jerk_limits, dt: float) -> np.ndarray:
    """q̈̄_eff = min(q̈̄, Δt q⃛̄ / (2 q̈̄)): one bound satisfying both limits."""
    accel = np.asarray(accel_limits, dtype=np.float64)
    jerk = np.asarray(jerk_limits, dtype=np.float64)
    return np.minimum(accel, dt * jerk / (2.0 * accel))


def integrate_rk2(accel_fn, q, qd, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One explicit-midpoint step of q̈ = f(q, q̇); the engine's scheme.

    Returns (q⁺, q̇⁺, k2) with q⁺ = q + Δt q̇ + ½Δt² k1 and q̇⁺ = q̇ + Δt k2.
    """
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    k1 = np.asarray(accel_fn(q, qd), dtype=np.float64)
    q_mid = q + 0.5 * dt * qd
    qd_mid = qd + 0.5 * dt * k1
    k2 = np.asarray(accel_fn(q_mid, qd_mid), dtype=np.float64)
    return q + dt * qd + 0.5 * dt * dt * k1, qd + dt * k2, k2


def pullback_resolve(entries, n: int, lambda_reg: float = 1e-6) -> np.ndarray:
    """Metric-weighted least-squares resolution over pulled-back terms.

    `entries` is an iterable of (TaskEval, FabricTermOutput) pairs; returns
    q̈ = (Σ JᵀMJ + λI)⁻¹ Σ JᵀM(ẍ_des − J̇q̇).
    """
    m_q = lambda_reg * np.eye(n)
    f_q = np.zeros(n)
    for ev, out in entries:
        mj = out.metric @ ev.jac
        m_q += ev.jac.T @ mj
        f_q += ev.jac.T @ (out.metric @ (out.accel - ev.curvature))
    return np.linalg.solve(m_q, f_q)


@dataclass
class LimitResult:
    qdd: np.ndarray
    alpha: float
    clamped: bool  # elementwise fallback fired (α_max insufficient)


def limit_accel_jerk(
    qdd_raw,
    m_q,
    f_q,
    prev_qdd,
    accel_limits,
    jerk_limits,
    dt: float,
    tol: float = 1e-4,
    max_iter: int = 60,
    alpha_max: float = 1e8,
) -> LimitResult:
    """Scale q̈ under the effective limits with a single bisected α.

    The effective bound already accounts for the jerk limit, so no explicit
    dependence on the previous 60 Hz acceleration is needed; `prev_qdd` is
    accepted for interface completeness and diagnostics.
    """
    del prev_qdd
    eff = effective_accel_limits(accel_limits, jerk_limits, dt)
    qdd_raw = np.asarray(qdd_raw, dtype=np.float64)
    out = np.empty_like(qdd_raw)
    alpha, clamped = _limit_core(
        np.asarray(m_q, dtype=np.float64),
        np.asarray(f_q, dtype=np.float64),
        qdd_raw,
        eff,
        tol,
        alpha_max,
        max_iter,
        out,
    )
    if clamped:
        logger.warning("alpha scaling insufficient at alpha_max=%g; clamped elementwise", alpha_max)
    return LimitResult(out, alpha, bool(clamped))


@njit(cache=True)
def _chol_solve(a, b, out):
    """Solve a x = b for SPD a. Returns 0 on success, 1 if not SPD."""
    n = a.shape[0]
    chol = np.empty((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = a[i, j]
            for k in range(j):
                acc -= chol[i, k] * chol[j, k]
            if i == j:
                if acc <= 0.0:
                    return 1
                chol[i, i] = np.sqrt(acc)
            else:
                chol[i, j] = acc / chol[j, j]
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= chol[i, k] * out[k]
        out[i] = acc / chol[i, i]
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for k in range(i + 1, n):
            acc -= chol[k, i] * out[k]
        out[i] = acc / chol[i, i]
    return 0


@njit(cache=True)
def _eig_ratio(vecs, w, fp, eff, alpha, qdd):
    """q̈(α) = V diag(1/(λ+α)) Vᵀf and its worst |q̈|/eff ratio."""
    n = w.shape[0]
    worst = 0.0
    for j in range(n):
        acc = 0.0
        for k in range(n):
            acc += vecs[j, k] * fp[k] / (w[k] + alpha)
        qdd[j] = acc
        r = abs(acc) / eff[j]
        if r > worst:
            worst = r
    return worst


@njit(cache=True)
def _limit_core(m_q, f_q, qdd_raw, eff, tol, alpha_max, max_iter, out):
    n = qdd_raw.shape[0]
    worst = 0.0
    for j in range(n):
        r = abs(qdd_raw[j]) / eff[j]
        if r > worst:
            worst = r
    if worst <= 1.0:
        out[:] = qdd_raw
        return 0.0, 0

    w, vecs = np.linalg.eigh(m_q)
    fp = vecs.T @ f_q
    qdd = np.empty(n)
    lo = 0.0
    hi = alpha_max
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        worst = _eig_ratio(vecs, w, fp, eff, mid, qdd)
        if worst > 1.0:
            lo = mid
        else:
            hi = mid
            if worst >= 1.0 - tol:
                out[:] = qdd
                return mid, 0
    worst = _eig_ratio(vecs, w, fp, eff, hi, qdd)
    if worst <= 1.0:
        out[:] = qdd
        return hi, 0
    for j in range(n):
        out[j] = min(max(qdd_raw[j], -eff[j]), eff[j])
    return hi, 1


@njit(cache=True)
def _resolve_core(
    q,
    qd,
    pose_targets,
    pca_target,
    q_target,
    parents,
    origin_rot,
    origin_xyz,
    axis_skew,
    axis_skew2,
    axes,
    ancestry,
    lower,
    upper,
    sph_frames,
    sph_offsets,
    sph_radii,
    pair_start,
    pair_other,
    obs_kinds,
    obs_data,
    palm_frames,
    palm_offsets,
    pca_mat,
    pca_pull,
    posture_target,
    g_rep,
    params,
    m_q,
    f_q,
):
    """Assemble M_q = Σ JᵀMJ + λI and f_q = Σ JᵀM(ẍ_des − J̇q̇).

    Returns (min signed distance, status, joint-limit clamp count); a
    non-zero status identifies the first term group with a non-finite
    intermediate.
    """
    n = q.shape[0]
    n_sph = sph_frames.shape[0]
    n_obs = obs_kinds.shape[0]
    n_palm = palm_frames.shape[0]
    cspace_mode = params[_P_MODE] == 1.0

    m_q[:] = 0.0
    f_q[:] = 0.0
    lam = params[_P_LAMBDA]
    for j in range(n):
        m_q[j, j] = lam

    rot0 = np.empty((n, 3, 3))
    pos0 = np.empty((n, 3))
    _fk_kernel(parents, origin_rot, origin_xyz, axis_skew, axis_skew2, q, rot0, pos0)
    axes_w0 = np.empty((n, 3))
    _world_axes_kernel(rot0, axes, axes_w0)
    q_eps = q + CURVATURE_EPS * qd
    rot1 = np.empty((n, 3, 3))
    pos1 = np.empty((n, 3))
    _fk_kernel(parents, origin_rot, origin_xyz, axis_skew, axis_skew2, q_eps, rot1, pos1)
    axes_w1 = np.empty((n, 3))
    _world_axes_kernel(rot1, axes, axes_w1)

    min_dist = np.inf
    jl_clamps = 0

    # --- per-sphere collision geometric + forcing pair -------------------
    if n_sph > 0:
        sph_pos = np.empty((n_sph, 3))
        _points_kernel(rot0, pos0, sph_frames, sph_offsets, sph_pos)
        sph_jac = np.empty((n_sph, 3, n))
        _jacobian_kernel(axes_w0, pos0, ancestry, sph_frames, sph_pos, sph_jac)
        sph_pos1 = np.empty((n_sph, 3))
        _points_kernel(rot1, pos1, sph_frames, sph_offsets, sph_pos1)
        sph_jac1 = np.empty((n_sph, 3, n))
        _jacobian_kernel(axes_w1, pos1, ancestry, sph_frames, sph_pos1, sph_jac1)

        k_g = params[_P_KG]
        k_f = params[_P_KF]
        b_col = params[_P_BCOL]
        beta = params[_P_BETA]
        a1 = params[_P_A1]
        a2 = params[_P_A2]
        d_min = params[_P_DMIN]
        d_cut = params[_P_DCUT]

        n_tmp = np.empty(3)
        r_tmp = np.empty(3)
        xd = np.empty(3)
        curv = np.empty(3)
        for s in range(n_sph):
            jac = sph_jac[s]
            jac1 = sph_jac1[s]
            for r in range(3):
                acc = 0.0
                acc1 = 0.0
                for k in range(n):
                    acc += jac[r, k] * qd[k]
                    acc1 += jac1[r, k] * qd[k]
                xd[r] = acc
                curv[r] = (acc1 - acc) / CURVATURE_EPS

            xb = np.zeros(3)
            m_b = np.zeros((3, 3))
            d_tilde = np.inf
            any_query = False
            speed2 = xd[0] * xd[0] + xd[1] * xd[1] + xd[2] * xd[2]

            for o in range(n_obs):
                d, _ = _obstacle_distance(
                    sph_pos[s], sph_radii[s], obs_kinds[o], obs_data[o], n_tmp, r_tmp
                )
                if d < min_dist:
                    min_dist = d
                d_lb = max(d_min, d)
                if d_lb > d_cut:
                    continue
                any_query = True
                if d_lb < d_tilde:
                    d_tilde = d_lb
                inv = 1.0 / d_lb
                v = -(xd[0] * n_tmp[0] + xd[1] * n_tmp[1] + xd[2] * n_tmp[2])
                gate = 0.5 * (np.tanh(-a1 * (v - a2)) + 1.0)
                wgt = gate * inv
                for r in range(3):
                    xb[r] -= inv * n_tmp[r]
                    for c in range(3):
                        m_b[r, c] += wgt * n_tmp[r] * n_tmp[c]

            for idx in range(pair_start[s], pair_start[s + 1]):
                t = pair_other[idx]
                d, _ = _sphere_pair_distance(
                    sph_pos[s], sph_radii[s], sph_pos[t], sph_radii[t], n_tmp, r_tmp
                )
                if d < min_dist:
                    min_dist = d
                d_lb = max(d_min, d)
                if d_lb > d_cut:
                    continue
                any_query = True
                if d_lb < d_tilde:
                    d_tilde = d_lb
                inv = 1.0 / d_lb
                v = -(xd[0] * n_tmp[0] + xd[1] * n_tmp[1] + xd[2] * n_tmp[2])
                gate = 0.5 * (np.tanh(-a1 * (v - a2)) + 1.0)
                wgt = gate * inv
                for r in range(3):
                    xb[r] -= inv * n_tmp[r]
                    for c in range(3):
                        m_b[r, c] += wgt * n_tmp[r] * n_tmp[c]

            if not any_query:
                continue

            fro = 0.0
            for r in range(3):
                for c in range(3):
                    fro += m_b[r, c] * m_b[r, c]
            fro = np.sqrt(fro)
            metric = np.zeros((3, 3))
            if fro >= EPS_DEGENERATE:
                scale = beta / (d_tilde * d_tilde) / fro
                for r in range(3):
                    for c in range(3):
                        metric[r, c] = scale * m_b[r, c]

            norm_xb = np.sqrt(xb[0] * xb[0] + xb[1] * xb[1] + xb[2] * xb[2])
            resid = np.empty(3)
            if norm_xb >= EPS_DEGENERATE:
                # geometric + forcing share the metric; sum both residuals
                metric_total = 2.0
                for r in range(3):
                    dirv = xb[r] / norm_xb
                    resid[r] = (k_g * speed2 + k_f) * dirv - b_col * xd[r] - 2.0 * curv[r]
            else:
                metric_total = 1.0
                for r in range(3):
                    resid[r] = -b_col * xd[r] - curv[r]
            f_task = np.empty(3)
            for r in range(3):
                acc = 0.0
                for c in range(3):
                    acc += metric[r, c] * resid[c]
                f_task[r] = acc

            mj = np.empty((3, n))
            for r in range(3):
                for b_i in range(n):
                    acc = 0.0
                    for c in range(3):
                        acc += metric[r, c] * jac[c, b_i]
                    mj[r, b_i] = acc
            for a_i in range(n):
                j0 = jac[0, a_i]
                j1 = jac[1, a_i]
                j2 = jac[2, a_i]
                f_q[a_i] += j0 * f_task[0] + j1 * f_task[1] + j2 * f_task[2]
                for b_i in range(n):
                    m_q[a_i, b_i] += metric_total * (
                        j0 * mj[0, b_i] + j1 * mj[1, b_i] + j2 * mj[2, b_i]
                    )

        if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
            return min_dist, 1, jl_clamps

    # --- joint-limit repulsion (upper: x = q̄ − q, lower: x = q − q̲) -----
    k_b = params[_P_KB]
    b_jl = params[_P_B_JL]
    for j in range(n):
        x_u = upper[j] - q[j]
        if x_u <= EPS_LIMIT:
            x_u = EPS_LIMIT
            jl_clamps += 1
        xd_u = -qd[j]
        if xd_u < 0.0:
            m_u = k_b / x_u
            m_q[j, j] += m_u
            f_q[j] -= m_u * (g_rep[j] - b_jl * xd_u)

        x_l = q[j] - lower[j]
        if x_l <= EPS_LIMIT:
            x_l = EPS_LIMIT
            jl_clamps += 1
        xd_l = qd[j]
        if xd_l < 0.0:
            m_l = k_b / x_l
            m_q[j, j] += m_l
            f_q[j] += m_l * (g_rep[j] - b_jl * xd_l)
    if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
        return min_dist, 2, jl_clamps

    if not cspace_mode:
        # --- PCA attraction (linear hand taskmap) -------------------------
        m_pca = params[_P_M_PCA]
        x_pca = pca_mat @ q
        xd_pca = pca_mat @ qd
        delta = x_pca - pca_target
        dist = np.sqrt(np.sum(delta * delta))
        accel = -params[_P_B_PCA] * xd_pca
        if dist >= EPS_DEGENERATE:
            drive = -params[_P_KA_PCA] * np.tanh(params[_P_AA_PCA] * dist) / dist
            accel = accel + drive * delta
        m_q += pca_pull
        f_q += pca_mat.T @ (m_pca * accel)
        if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
            return min_dist, 3, jl_clamps

        # --- palm pose attraction (21-D stacked points) -------------------
        m_pose = params[_P_M_POSE]
        palm_pos0 = np.empty((n_palm, 3))
        _points_kernel(rot0, pos0, palm_frames, palm_offsets, palm_pos0)
        palm_jac0 = np.empty((n_palm, 3, n))
        _jacobian_kernel(axes_w0, pos0, ancestry, palm_frames, palm_pos0, palm_jac0)
        palm_pos1 = np.empty((n_palm, 3))
        _points_kernel(rot1, pos1, palm_frames, palm_offsets, palm_pos1)
        palm_jac1 = np.empty((n_palm, 3, n))
        _jacobian_kernel(axes_w1, pos1, ancestry, palm_frames, palm_pos1, palm_jac1)

        k21 = 3 * n_palm
        x_pose = palm_pos0.reshape(k21)
        jac_pose = palm_jac0.reshape(k21, n)
        curv_pose = ((palm_jac1.reshape(k21, n) - jac_pose) @ qd) / CURVATURE_EPS
        xd_pose = jac_pose @ qd
        delta_p = x_pose - pose_targets
        dist_p = np.sqrt(np.sum(delta_p * delta_p))
        accel_p = -params[_P_B_POSE] * xd_pose
        if dist_p >= EPS_DEGENERATE:
            drive = -params[_P_KA_POSE] * np.tanh(params[_P_AA_POSE] * dist_p) / dist_p
            accel_p = accel_p + drive * delta_p
        m_q += m_pose * (jac_pose.T @ jac_pose)
        f_q += jac_pose.T @ (m_pose * (accel_p - curv_pose))
        if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
            return min_dist, 4, jl_clamps
    else:
        # --- cspace-target attraction (identity map) ----------------------
        m_cs = params[_P_M_CS]
        delta_c = q - q_target
        dist_c = np.sqrt(np.sum(delta_c * delta_c))
        accel_c = -params[_P_B_CS] * qd
        if dist_c >= EPS_DEGENERATE:
            drive = -params[_P_KA_CS] * np.tanh(params[_P_AA_CS] * dist_c) / dist_c
            accel_c = accel_c + drive * delta_c
        for j in range(n):
            m_q[j, j] += m_cs
            f_q[j] += m_cs * accel_c[j]
        if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
            return min_dist, 6, jl_clamps

    # --- HD2 posture attractor on the identity map (keeps M_q full rank) --
    m_post = params[_P_M_POST]
    delta_q = q - posture_target
    dist_q = np.sqrt(np.sum(delta_q * delta_q))
    if dist_q >= EPS_DEGENERATE:
        speed2 = np.sum(qd * qd)
        drive = -params[_P_KA_POST] * speed2 * np.tanh(params[_P_AA_POST] * dist_q) / dist_q
        for j in range(n):
            m_q[j, j] += m_post
            f_q[j] += m_post * drive * delta_q[j]
    else:
        for j in range(n):
            m_q[j, j] += m_post
    if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
        return min_dist, 5, jl_clamps

    # --- cspace damping ----------------------------------------------------
    b_c = params[_P_BC]
    for j in range(n):
        m_q[j, j] += 1.0
        f_q[j] += -b_c * qd[j]
    if not (np.all(np.isfinite(m_q)) and np.all(np.isfinite(f_q))):
        return min_dist, 6, jl_clamps

    return min_dist, 0, jl_clamps


@njit(cache=True)
def _min_distance_core(
    q,
    parents,
    origin_rot,
    origin_xyz,
    axis_skew,
    axis_skew2,
    sph_frames,
    sph_offsets,
    sph_radii,
    pair_start,
    pair_other,
    obs_kinds,
    obs_data,
):
    n = q.shape[0]
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    _fk_kernel(parents, origin_rot, origin_xyz, axis_skew, axis_skew2, q, rot, pos)
    n_sph = sph_frames.shape[0]
    sph_pos = np.empty((n_sph, 3))
    _points_kernel(rot, pos, sph_frames, sph_offsets, sph_pos)
    n_tmp = np.empty(3)
    r_tmp = np.empty(3)
    best = np.inf
    for s in range(n_sph):
        for o in range(obs_kinds.shape[0]):
            d, _ = _obstacle_distance(
                sph_pos[s], sph_radii[s], obs_kinds[o], obs_data[o], n_tmp, r_tmp
            )
            if d < best:
                best = d
        for idx in range(pair_start[s], pair_start[s + 1]):
            t = pair_other[idx]
            d, _ = _sphere_pair_distance(
                sph_pos[s], sph_radii[s], sph_pos[t], sph_radii[t], n_tmp, r_tmp
            )
            if d < best:
                best = d
    return best


@njit(cache=True)
def _step_core(
    q,
    qd,
    pose_targets,
    pca_target,
    q_target,
    dt,
    eff,
    tol,
    alpha_max,
    max_iter,
    parents,
    origin_rot,
    origin_xyz,
    axis_skew,
    axis_skew2,
    axes,
    ancestry,
    lower,
    upper,
    sph_frames,
    sph_offsets,
    sph_radii,
    pair_start,
    pair_other,
    obs_kinds,
    obs_data,
    palm_frames,
    palm_offsets,
    pca_mat,
    pca_pull,
    posture_target,
    g_rep,
    params,
):
    """One 60 Hz step: resolve → limit → explicit-midpoint RK2 → clamp."""
    n = q.shape[0]
    m_q = np.empty((n, n))
    f_q = np.empty(n)

    min_dist, status, jl1 = _resolve_core(
        q, qd, pose_targets, pca_target, q_target,
        parents, origin_rot, origin_xyz, axis_skew, axis_skew2, axes, ancestry,
        lower, upper, sph_frames, sph_offsets, sph_radii, pair_start, pair_other,
        obs_kinds, obs_data, palm_frames, palm_offsets, pca_mat, pca_pull,
        posture_target, g_rep, params, m_q, f_q,
    )
    if status != 0:
        return q, qd, qd, 0.0, min_dist, 0, jl1, status
    qdd1_raw = np.empty(n)
    if _chol_solve(m_q, f_q, qdd1_raw) != 0:
        qdd1_raw = np.linalg.solve(m_q, f_q)
    if not np.all(np.isfinite(qdd1_raw)):
        return q, qd, qd, 0.0, min_dist, 0, jl1, 7
    qdd1 = np.empty(n)
    alpha1, _ = _limit_core(m_q, f_q, qdd1_raw, eff, tol, alpha_max, max_iter, qdd1)

    q_mid = q + 0.5 * dt * qd
    qd_mid = qd + 0.5 * dt * qdd1
    _, status, jl2 = _resolve_core(
        q_mid, qd_mid, pose_targets, pca_target, q_target,
        parents, origin_rot, origin_xyz, axis_skew, axis_skew2, axes, ancestry,
        lower, upper, sph_frames, sph_offsets, sph_radii, pair_start, pair_other,
        obs_kinds, obs_data, palm_frames, palm_offsets, pca_mat, pca_pull,
        posture_target, g_rep, params, m_q, f_q,
    )
    if status != 0:
        return q, qd, qd, alpha1, min_dist, 0, jl1 + jl2, status
    qdd2_raw = np.empty(n)
    if _chol_solve(m_q, f_q, qdd2_raw) != 0:
        qdd2_raw = np.linalg.solve(m_q, f_q)
    if not np.all(np.isfinite(qdd2_raw)):
        return q, qd, qd, alpha1, min_dist, 0, jl1 + jl2, 7
    qdd2 = np.empty(n)
    alpha2, _ = _limit_core(m_q, f_q, qdd2_raw, eff, tol, alpha_max, max_iter, qdd2)

    q_new = q + dt * qd + 0.5 * dt * dt * qdd1
    qd_new = qd + dt * qdd2
    clamp_count = 0
    for j in range(n):
        if q_new[j] < lower[j]:
            q_new[j] = lower[j]
            qd_new[j] = 0.0
            clamp_count += 1
        elif q_new[j] > upper[j]:
            q_new[j] = upper[j]
            qd_new[j] = 0.0
            clamp_count += 1

    alpha = alpha1 if alpha1 >= alpha2 else alpha2
    return q_new, qd_new, qdd2, alpha, min_dist, clamp_count, jl1 + jl2, 0


class Trajectory:
    """Rollout record: one row per state starting from the initial one."""

    def __init__(self, n: int):
        self.n = n
        self.rows: list[tuple] = []

    def append(self, t, state: FabricState, min_dist, alpha, clamped):
        self.rows.append(
            (float(t), state.q.copy(), state.qd.copy(), state.qdd.copy(), float(min_dist), float(alpha), int(clamped))
        )

    def __len__(self):
        return len(self.rows)

    @property
    def n_steps(self) -> int:
        return max(len(self.rows) - 1, 0)

    def header(self) -> list[str]:
        n = self.n
        return (
            ["t"]
            + [f"q_{i}" for i in range(n)]
            + [f"qd_{i}" for i in range(n)]
            + [f"qdd_{i}" for i in range(n)]
            + ["min_dist", "alpha", "clamped"]
        )

    def to_arrays(self) -> dict:
        return {
            "t": np.array([r[0] for r in self.rows]),
            "q": np.stack([r[1] for r in self.rows]) if self.rows else np.zeros((0, self.n)),
            "qd": np.stack([r[2] for r in self.rows]) if self.rows else np.zeros((0, self.n)),
            "qdd": np.stack([r[3] for r in self.rows]) if self.rows else np.zeros((0, self.n)),
            "min_dist": np.array([r[4] for r in self.rows]),
            "alpha": np.array([r[5] for r in self.rows]),
            "clamped": np.array([r[6] for r in self.rows], dtype=int),
        }

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write(",".join(self.header()) + "\n")
            for t, q, qd, qdd, md, al, cl in self.rows:
                vals = [repr(t)]
                vals += [repr(float(v)) for v in q]
                vals += [repr(float(v)) for v in qd]
                vals += [repr(float(v)) for v in qdd]
                vals += [repr(md), repr(al), str(cl)]
                f.write(",".join(vals) + "\n")

    def summary(self) -> dict:
        arrays = self.to_arrays()
        return {
            "steps": self.n_steps,
            "min_dist": float(arrays["min_dist"].min()) if len(self.rows) else None,
            "clamp_count": int(arrays["clamped"].sum()),
            "max_alpha": float(arrays["alpha"].max()) if len(self.rows) else None,
        }


class FabricEngine:
    """Steps fabric states for one (model, world, config) triple.

    Stepping is a pure transition function of (state, action); a single
    state must not be stepped concurrently from two callers, but distinct
    engines and batch elements are independent.
    """

    def __init__(self, model: KinematicModel, world: CollisionWorld, config: EngineConfig):
        self.model = model
        self.world = world
        self.config = config
        n = model.dof_count

        if config.mode == MODE_PCA_POSE:
            if config.pca_components is None:
                raise ConfigurationError("pca_pose mode needs pca_components")
            if config.palm_frame is None:
                raise ConfigurationError("pca_pose mode needs a palm_frame")
            comps = np.asarray(config.pca_components, dtype=np.float64)
            self.palm_map = taskmaps.palm_pose_taskmap(model, config.palm_frame, config.palm_offsets)
            self.pca_map = taskmaps.pca_taskmap(comps, n, config.hand_offset)
            self._pca_mat = self.pca_map.matrix
            self._palm_frames = self.palm_map.frames
            self._palm_offsets = self.palm_map.offsets
        else:
            self.palm_map = None
            self.pca_map = None
            self._pca_mat = np.zeros((0, n))
            self._palm_frames = np.zeros(0, dtype=np.int64)
            self._palm_offsets = np.zeros((0, 3))
        self._pca_pull = config.pca_attraction.m * (self._pca_mat.T @ self._pca_mat)

        if config.posture_target is None:
            self._posture_target = 0.5 * (model.lower_limits + model.upper_limits)
        else:
            self._posture_target = np.asarray(config.posture_target, dtype=np.float64)
            if self._posture_target.shape != (n,):
                raise ConfigurationError(f"posture target must have shape ({n},)")

        self._sph_frames, self._sph_offsets, self._sph_radii = model.sphere_arrays()
        n_sph = len(self._sph_radii)
        directed: list[list[int]] = [[] for _ in range(n_sph)]
        for a, b in config.self_pairs:
            ia = model._sphere_index[a] if isinstance(a, str) else int(a)
            ib = model._sphere_index[b] if isinstance(b, str) else int(b)
            if ia == ib or not (0 <= ia < n_sph and 0 <= ib < n_sph):
                raise ConfigurationError(f"bad self-collision pair ({a!r}, {b!r})")
            directed[ia].append(ib)
            directed[ib].append(ia)
        starts = np.zeros(n_sph + 1, dtype=np.int64)
        for s in range(n_sph):
            starts[s + 1] = starts[s] + len(directed[s])
        self._pair_start = starts
        self._pair_other = np.array(
            [t for lst in directed for t in lst], dtype=np.int64
        ) if starts[-1] else np.zeros(0, dtype=np.int64)

        self._g_rep = config.joint_limit.g_vector(n)
        self._eff = effective_accel_limits(model.accel_limits, model.jerk_limits, config.dt)

        params = np.zeros(_N_PARAMS)
        col = config.collision
        params[_P_KG], params[_P_KF], params[_P_BCOL] = col.k_g, col.k_f, col.b
        params[_P_BETA], params[_P_A1], params[_P_A2] = col.beta, col.alpha1, col.alpha2
        params[_P_DMIN], params[_P_DCUT] = world.d_min, col.d_cutoff
        pca = config.pca_attraction
        params[_P_M_PCA], params[_P_KA_PCA], params[_P_AA_PCA], params[_P_B_PCA] = (
            pca.m, pca.k_a, pca.alpha_a, pca.b,
        )
        pose = config.pose_attraction
        params[_P_M_POSE], params[_P_KA_POSE], params[_P_AA_POSE], params[_P_B_POSE] = (
            pose.m, pose.k_a, pose.alpha_a, pose.b,
        )
        post = config.posture
        params[_P_M_POST], params[_P_KA_POST], params[_P_AA_POST] = post.m, post.k_a, post.alpha_a
        params[_P_KB], params[_P_B_JL] = config.joint_limit.k_b, config.joint_limit.b
        params[_P_BC], params[_P_LAMBDA] = config.cspace_damping, config.lambda_reg
        cs = config.cspace_attraction
        params[_P_M_CS], params[_P_KA_CS], params[_P_AA_CS], params[_P_B_CS] = (
            cs.m, cs.k_a, cs.alpha_a, cs.b,
        )
        params[_P_MODE] = 1.0 if config.mode == MODE_CSPACE else 0.0
        self._params = params

        m = self.model
        self._model_args = (
            m.parents, m.origin_rot, m.origin_xyz, m.axis_skew, m.axis_skew2,
            m.axes, m.ancestry, m.lower_limits, m.upper_limits,
        )
        self._scene_args = (
            self._sph_frames, self._sph_offsets, self._sph_radii,
            self._pair_start, self._pair_other,
            world.kinds, world.data,
            self._palm_frames, self._palm_offsets,
            self._pca_mat, self._pca_pull, self._posture_target, self._g_rep, self._params,
        )

    @property
    def dof_count(self) -> int:
        return self.model.dof_count

    def initial_state(self, q=None, qd=None) -> FabricState:
        n = self.dof_count
        q = self._posture_target.copy() if q is None else np.asarray(q, dtype=np.float64)
        qd = np.zeros(n) if qd is None else np.asarray(qd, dtype=np.float64)
        return FabricState(q, qd)

    def _action_arrays(self, action):
        n = self.dof_count
        if self.config.mode == MODE_PCA_POSE:
            if not isinstance(action, ActionCommand):
                action = ActionCommand.from_array(action)
            pose_targets = self.palm_map.pose_to_targets(action.palm_pos, action.palm_rpy)
            if not (np.isfinite(pose_targets).all() and np.isfinite(action.pca).all()):
                raise ConfigurationError("action must be finite")
            return action, pose_targets, action.pca, np.zeros(n)
        if isinstance(action, CspaceTarget):
            q_target = action.q_target
        else:
            q_target = np.asarray(action, dtype=np.float64)
            action = CspaceTarget(q_target)
        if q_target.shape != (n,):
            raise ConfigurationError(f"cspace target must have shape ({n},)")
        if not np.isfinite(q_target).all():
            raise ConfigurationError("cspace target must be finite")
        return action, np.zeros(0), np.zeros(0), q_target

    def _check_state(self, state: FabricState):
        if state.q.shape != (self.dof_count,):
            raise ConfigurationError(
                f"state has {state.q.shape[0]} dofs, engine expects {self.dof_count}"
            )
        if not (np.isfinite(state.q).all() and np.isfinite(state.qd).all()):
            raise ConfigurationError("state must be finite")

    def resolve(self, state: FabricState, action) -> np.ndarray:
        """Unlimited configuration-space acceleration M_q⁻¹ f_q."""
        self._check_state(state)
        _, pose_targets, pca_target, q_target = self._action_arrays(action)
        n = self.dof_count
        m_q = np.empty((n, n))
        f_q = np.empty(n)
        _, status, _ = _resolve_core(
            state.q, state.qd, pose_targets, pca_target, q_target,
            *self._model_args, *self._scene_args, m_q, f_q,
        )
        if status != _ST_OK:
            raise EngineFault(
                f"non-finite intermediate in term group {_TERM_NAMES[status]!r}",
                term=_TERM_NAMES[status],
            )
        qdd = np.linalg.solve(m_q, f_q)
        if not np.isfinite(qdd).all():
            raise EngineFault("resolve produced non-finite acceleration", term="resolve_solve")
        return qdd

    def resolve_assembled(self, state: FabricState, action):
        """(M_q, f_q) for callers that need the assembled system."""
        self._check_state(state)
        _, pose_targets, pca_target, q_target = self._action_arrays(action)
        n = self.dof_count
        m_q = np.empty((n, n))
        f_q = np.empty(n)
        _, status, _ = _resolve_core(
            state.q, state.qd, pose_targets, pca_target, q_target,
            *self._model_args, *self._scene_args, m_q, f_q,
        )
        if status != _ST_OK:
            raise EngineFault(
                f"non-finite intermediate in term group {_TERM_NAMES[status]!r}",
                term=_TERM_NAMES[status],
            )
        return m_q, f_q

    def step_detailed(self, state: FabricState, action) -> tuple[FabricState, StepInfo]:
        self._check_state(state)
        act, pose_targets, pca_target, q_target = self._action_arrays(action)
        cfg = self.config
        q_new, qd_new, qdd_new, alpha, min_dist, clamps, jl_clamps, status = _step_core(
            state.q, state.qd, pose_targets, pca_target, q_target,
            cfg.dt, self._eff, cfg.bisect_tol, cfg.alpha_max, cfg.bisect_max_iter,
            *self._model_args, *self._scene_args,
        )
        if status != _ST_OK:
            raise EngineFault(
                f"non-finite intermediate in term group {_TERM_NAMES[status]!r}",
                term=_TERM_NAMES[status],
            )
        new = FabricState(q_new, qd_new, qdd_new, state.step_count + 1, act)
        return new, StepInfo(float(min_dist), float(alpha), int(clamps), int(jl_clamps))

    def step(self, state: FabricState, action) -> FabricState:
        """One 60 Hz engine step."""
        return self.step_detailed(state, action)[0]

    def step_batch(self, states, actions) -> list[FabricState]:
        """Map `step` over a batch; results identical to the sequential loop.

        Action arrays are derived once per distinct action object (repeated
        actions are the common case in policy-rate batches), which changes
        no values. Faults are isolated per element and reported by index.
        """
        if len(states) != len(actions):
            raise ConfigurationError("states and actions must have equal length")
        cfg = self.config
        derived: dict[int, tuple] = {}
        out: list[FabricState | None] = []
        faults = []
        for i, (s, a) in enumerate(zip(states, actions)):
            try:
                self._check_state(s)
                key = id(a)
                if key not in derived:
                    derived[key] = self._action_arrays(a)
                act, pose_targets, pca_target, q_target = derived[key]
                q_new, qd_new, qdd_new, _, _, _, _, status = _step_core(
                    s.q, s.qd, pose_targets, pca_target, q_target,
                    cfg.dt, self._eff, cfg.bisect_tol, cfg.alpha_max, cfg.bisect_max_iter,
                    *self._model_args, *self._scene_args,
                )
                if status != _ST_OK:
                    raise EngineFault(
                        f"non-finite intermediate in term group {_TERM_NAMES[status]!r}",
                        term=_TERM_NAMES[status],
                    )
                out.append(FabricState(q_new, qd_new, qdd_new, s.step_count + 1, act))
            except (EngineFault, ConfigurationError) as exc:
                faults.append((i, str(exc)))
                out.append(None)
        if faults:
            raise BatchEngineFault(faults, states=out)
        return out

    def min_distance(self, state: FabricState) -> float:
        """Smallest signed distance over all sphere queries at a state."""
        self._check_state(state)
        if len(self._sph_radii) == 0:
            return float("inf")
        return float(
            _min_distance_core(
                state.q, self.model.parents, self.model.origin_rot, self.model.origin_xyz,
                self.model.axis_skew, self.model.axis_skew2,
                self._sph_frames, self._sph_offsets, self._sph_radii,
                self._pair_start, self._pair_other, self.world.kinds, self.world.data,
            )
        )

    def run_policy_rate(self, state: FabricState, action_source, steps: int) -> Trajectory:
        """Step the engine `steps` times, pulling one action per action_repeat.

        The trajectory has one row per state (steps+1 on success). When the
        action source fails, the truncated trajectory is attached to the
        raised EngineFault.
        """
        traj = Trajectory(self.dof_count)
        current = state
        action = None
        pull = _as_puller(action_source)
        for k in range(steps):
            if k % self.config.action_repeat == 0:
                try:
                    action = pull(current)
                except Exception as exc:
                    traj.append(k * self.config.dt, current, self.min_distance(current), 0.0, 0)
                    raise EngineFault(
                        f"action source failed at step {k}: {exc}",
                        term="action_source",
                        trajectory=traj,
                    ) from exc
            new, info = self.step_detailed(current, action)
            traj.append(k * self.config.dt, current, info.min_dist, info.alpha, info.clamp_count)
            current = new
        traj.append(steps * self.config.dt, current, self.min_distance(current), 0.0, 0)
        return traj


def _as_puller(action_source):
    if callable(action_source):
        return action_source
    if hasattr(action_source, "__next__"):
        return lambda _state: next(action_source)
    iterator = iter(action_source)
    return lambda _state: next(iterator)


class ScriptedActionSource:
    """Plays a fixed list of actions, holding the last one when exhausted."""

    def __init__(self, actions):
        if not actions:
            raise ConfigurationError("action script must not be empty")
        self.actions = list(actions)
        self.pulls = 0

    def __call__(self, _state) -> object:
        idx = min(self.pulls, len(self.actions) - 1)
        self.pulls += 1
        return self.actions[idx]


@dataclass
class ActionBounds:
    """Uniform sampling box for random action sources."""

    palm_pos_low: np.ndarray = field(default_factory=lambda: np.array([0.2, -0.4, 0.1]))
    palm_pos_high: np.ndarray = field(default_factory=lambda: np.array([0.7, 0.4, 0.6]))
    palm_rpy_low: np.ndarray = field(default_factory=lambda: np.array([-np.pi, -0.5 * np.pi, -np.pi]))
    palm_rpy_high: np.ndarray = field(default_factory=lambda: np.array([np.pi, 0.5 * np.pi, np.pi]))
    pca_low: np.ndarray = field(default_factory=lambda: np.full(5, -2.0))
    pca_high: np.ndarray = field(default_factory=lambda: np.full(5, 2.0))


class RandomActionSource:
    """Seeded uniform action sampler at the policy rate."""

    def __init__(self, seed: int, bounds: ActionBounds | None = None, mode: str = MODE_PCA_POSE, n: int = 0):
        self.rng = np.random.default_rng(seed)
        self.bounds = bounds or ActionBounds()
        self.mode = mode
        self.n = n
        self.pulls = 0

    def __call__(self, state) -> object:
        self.pulls += 1
        b = self.bounds
        if self.mode == MODE_CSPACE:
            return CspaceTarget(self.rng.uniform(-1.0, 1.0, size=self.n))
        return ActionCommand(
            self.rng.uniform(b.palm_pos_low, b.palm_pos_high),
            self.rng.uniform(b.palm_rpy_low, b.palm_rpy_high),
            self.rng.uniform(b.pca_low, b.pca_high),
        )
