"""Kinematic chains: forward kinematics to attached points and Jacobians.

Models are flat lists of revolute joints with parent indices (trees allowed).
Each joint frame is ``T_parent * T_origin * R(axis, q)``; body points and
collision spheres are rigid offsets in a joint frame. Angles are unwrapped;
position limits are enforced by the engine, not by wrapping.

The analytic Jacobian (axis cross lever-arm columns) is the default path;
finite differences are kept to the test suite as the independent oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigurationError

CURVATURE_EPS = 1e-6


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # index into the joint list, -1 for the world frame
    axis: np.ndarray  # unit axis in the joint frame
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    lower: float
    upper: float
    accel_limit: float
    jerk_limit: float


@dataclass(frozen=True)
class AttachedPoint:
    name: str
    frame: int
    offset: np.ndarray


@dataclass(frozen=True)
class CollisionSphere:
    name: str
    frame: int
    offset: np.ndarray
    radius: float


@dataclass
class JointState:
    """Configuration-space state (q, q̇), radians and rad/s."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.qd = np.asarray(self.qd, dtype=np.float64)
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise ConfigurationError("q and qd must be 1-D vectors of equal length")
        if not (np.isfinite(self.q).all() and np.isfinite(self.qd).all()):
            raise ConfigurationError("joint state must be finite")


@dataclass
class KinematicModel:
    """Joint-limit-annotated revolute chain with attached points and spheres.

    Construction precomputes the flat arrays the numeric kernels consume:
    per-joint origin rotations, skew matrices of the axes, and the
    joint-ancestry mask used for Jacobian columns.
    """

    joints: list[Joint]
    body_points: list[AttachedPoint] = field(default_factory=list)
    collision_spheres: list[CollisionSphere] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.joints)
        if n < 1:
            raise ConfigurationError("model needs at least one joint")
        names = [j.name for j in self.joints]
        if len(set(names)) != n:
            raise ConfigurationError("duplicate joint names")
        for i, j in enumerate(self.joints):
            if not (-1 <= j.parent < i):
                raise ConfigurationError(
                    f"joint {j.name!r}: parent index {j.parent} must precede it"
                )
            if not (np.isfinite(j.lower) and np.isfinite(j.upper) and j.lower < j.upper):
                raise ConfigurationError(f"joint {j.name!r}: need finite lower < upper")
            if not (j.accel_limit > 0 and j.jerk_limit > 0):
                raise ConfigurationError(f"joint {j.name!r}: accel/jerk limits must be > 0")
        for p in list(self.body_points) + list(self.collision_spheres):
            if not (0 <= p.frame < n):
                raise ConfigurationError(f"point {p.name!r} references unknown frame {p.frame}")

        self._joint_index = {j.name: i for i, j in enumerate(self.joints)}
        self._point_index = {p.name: i for i, p in enumerate(self.body_points)}
        self._sphere_index = {s.name: i for i, s in enumerate(self.collision_spheres)}

        self.parents = np.array([j.parent for j in self.joints], dtype=np.int64)
        self.axes = np.stack([j.axis for j in self.joints]).astype(np.float64)
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ConfigurationError("joint axes must be unit vectors")
        self.axes /= norms[:, None]

        from .rotations import rpy_to_matrix, skew

        self.origin_rot = np.stack([rpy_to_matrix(j.origin_rpy) for j in self.joints])
        self.origin_xyz = np.stack([j.origin_xyz for j in self.joints]).astype(np.float64)
        self.axis_skew = np.stack([skew(a) for a in self.axes])
        self.axis_skew2 = np.stack([k @ k for k in self.axis_skew])

        self.lower_limits = np.array([j.lower for j in self.joints])
        self.upper_limits = np.array([j.upper for j in self.joints])
        self.accel_limits = np.array([j.accel_limit for j in self.joints])
        self.jerk_limits = np.array([j.jerk_limit for j in self.joints])

        # ancestry[f, j] is True when joint j moves frame f
        anc = np.zeros((n, n), dtype=np.bool_)
        for f in range(n):
            j = f
            while j >= 0:
                anc[f, j] = True
                j = int(self.parents[j])
        self.ancestry = anc

    @property
    def dof_count(self) -> int:
        return len(self.joints)

    def joint_id(self, name: str) -> int:
        try:
            return self._joint_index[name]
        except KeyError:
            raise ConfigurationError(f"unknown joint {name!r}") from None

    def point(self, name: str) -> AttachedPoint:
        try:
            return self.body_points[self._point_index[name]]
        except KeyError:
            raise ConfigurationError(f"unknown body point {name!r}") from None

    def resolve_points(self, point_ids) -> tuple[np.ndarray, np.ndarray]:
        """Map body-point names to (frame indices, local offsets) arrays."""
        pts = [self.point(pid) for pid in point_ids]
        frames = np.array([p.frame for p in pts], dtype=np.int64)
        offsets = np.stack([p.offset for p in pts]).astype(np.float64)
        return frames, offsets

    def sphere_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.collision_spheres:
            return (
                np.zeros(0, dtype=np.int64),
                np.zeros((0, 3)),
                np.zeros(0),
            )
        frames = np.array([s.frame for s in self.collision_spheres], dtype=np.int64)
        offsets = np.stack([s.offset for s in self.collision_spheres]).astype(np.float64)
        radii = np.array([s.radius for s in self.collision_spheres])
        return frames, offsets, radii

    def frames(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World rotation and origin of every joint frame."""
        q = _check_q(self, q)
        rot = np.empty((self.dof_count, 3, 3))
        pos = np.empty((self.dof_count, 3))
        _fk_kernel(
            self.parents, self.origin_rot, self.origin_xyz,
            self.axis_skew, self.axis_skew2, q, rot, pos,
        )
        return rot, pos


def _check_q(model: KinematicModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.dof_count,):
        raise ConfigurationError(
            f"q has shape {q.shape}, expected ({model.dof_count},)"
        )
    return q


@njit(cache=True)
def _fk_kernel(parents, origin_rot, origin_xyz, axis_skew, axis_skew2, q, out_rot, out_pos):
    # explicit 3×3 arithmetic: tiny-matrix BLAS dispatch costs more than it saves
    n = parents.shape[0]
    ra = np.empty((3, 3))
    rel = np.empty((3, 3))
    for i in range(n):
        s = np.sin(q[i])
        c = np.cos(q[i])
        one_c = 1.0 - c
        for r in range(3):
            for cc in range(3):
                v = s * axis_skew[i, r, cc] + one_c * axis_skew2[i, r, cc]
                if r == cc:
                    v += 1.0
                ra[r, cc] = v
        for r in range(3):
            for cc in range(3):
                acc = 0.0
                for k in range(3):
                    acc += origin_rot[i, r, k] * ra[k, cc]
                rel[r, cc] = acc
        p = parents[i]
        if p < 0:
            for r in range(3):
                out_pos[i, r] = origin_xyz[i, r]
                for cc in range(3):
                    out_rot[i, r, cc] = rel[r, cc]
        else:
            for r in range(3):
                acc_p = out_pos[p, r]
                for k in range(3):
                    acc_p += out_rot[p, r, k] * origin_xyz[i, k]
                out_pos[i, r] = acc_p
                for cc in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += out_rot[p, r, k] * rel[k, cc]
                    out_rot[i, r, cc] = acc


@njit(cache=True)
def _points_kernel(frame_rot, frame_pos, frames, offsets, out):
    for m in range(frames.shape[0]):
        f = frames[m]
        for r in range(3):
            acc = frame_pos[f, r]
            for k in range(3):
                acc += frame_rot[f, r, k] * offsets[m, k]
            out[m, r] = acc


@njit(cache=True)
def _world_axes_kernel(frame_rot, axes, out):
    for j in range(axes.shape[0]):
        for r in range(3):
            acc = 0.0
            for k in range(3):
                acc += frame_rot[j, r, k] * axes[j, k]
            out[j, r] = acc


@njit(cache=True)
def _jacobian_kernel(axes_world, frame_pos, ancestry, frames, points, out):
    """Columns are z_j × (p − o_j) for every joint j that moves the point."""
    n = axes_world.shape[0]
    out[:] = 0.0
    for m in range(frames.shape[0]):
        f = frames[m]
        for j in range(n):
            if ancestry[f, j]:
                zx = axes_world[j, 0]
                zy = axes_world[j, 1]
                zz = axes_world[j, 2]
                rx = points[m, 0] - frame_pos[j, 0]
                ry = points[m, 1] - frame_pos[j, 1]
                rz = points[m, 2] - frame_pos[j, 2]
                out[m, 0, j] = zy * rz - zz * ry
                out[m, 1, j] = zz * rx - zx * rz
                out[m, 2, j] = zx * ry - zy * rx


def point_positions(model: KinematicModel, q, frames, offsets) -> np.ndarray:
    """World positions, shape (m, 3), for raw (frame, offset) attachments."""
    rot, pos = model.frames(q)
    out = np.empty((len(frames), 3))
    _points_kernel(rot, pos, frames, offsets, out)
    return out


def point_jacobians(model: KinematicModel, q, frames, offsets) -> np.ndarray:
    """Analytic point Jacobians, shape (m, 3, n)."""
    rot, pos = model.frames(q)
    pts = np.empty((len(frames), 3))
    _points_kernel(rot, pos, frames, offsets, pts)
    axes_w = np.empty((model.dof_count, 3))
    _world_axes_kernel(rot, model.axes, axes_w)
    out = np.empty((len(frames), 3, model.dof_count))
    _jacobian_kernel(axes_w, pos, model.ancestry, frames, pts, out)
    return out


def point_curvatures(model: KinematicModel, q, qd, frames, offsets) -> np.ndarray:
    """J̇q̇ per point via the directional difference (J(q+εq̇) − J(q))q̇/ε."""
    q = _check_q(model, q)
    qd = np.asarray(qd, dtype=np.float64)
    j0 = point_jacobians(model, q, frames, offsets)
    j1 = point_jacobians(model, q + CURVATURE_EPS * qd, frames, offsets)
    return (j1 - j0) @ qd / CURVATURE_EPS


def forward_points(model: KinematicModel, q, point_ids) -> np.ndarray:
    """World positions of named body points, shape (k, 3)."""
    frames, offsets = model.resolve_points(point_ids)
    return point_positions(model, _check_q(model, q), frames, offsets)


def jacobian(model: KinematicModel, q, point_ids) -> np.ndarray:
    """Stacked position Jacobian of named body points, shape (3k, n)."""
    frames, offsets = model.resolve_points(point_ids)
    j = point_jacobians(model, _check_q(model, q), frames, offsets)
    return j.reshape(-1, model.dof_count)


def curvature_term(model: KinematicModel, q, qd, point_ids) -> np.ndarray:
    """Stacked J̇q̇ of named body points, shape (3k,)."""
    frames, offsets = model.resolve_points(point_ids)
    return point_curvatures(model, q, qd, frames, offsets).reshape(-1)


def _as_vec3(name, value):
    v = np.asarray(value, dtype=np.float64)
    if v.shape != (3,) or not np.isfinite(v).all():
        raise ConfigurationError(f"{name} must be a finite 3-vector, got {value!r}")
    return v


def model_from_dict(doc: dict) -> KinematicModel:
    """Build a model from the robot JSON document schema."""
    if "joints" not in doc or not doc["joints"]:
        raise ConfigurationError("robot document needs a non-empty 'joints' list")
    name_to_idx: dict[str, int] = {}
    joints = []
    for i, jd in enumerate(doc["joints"]):
        jtype = jd.get("type", "revolute")
        if jtype != "revolute":
            raise ConfigurationError(f"joint {jd.get('name')!r}: only revolute joints are supported")
        parent = jd.get("parent")
        if parent is None or parent == "world":
            pidx = -1
        elif isinstance(parent, int):
            pidx = parent
        else:
            if parent not in name_to_idx:
                raise ConfigurationError(f"joint {jd.get('name')!r}: unknown parent {parent!r}")
            pidx = name_to_idx[parent]
        origin = jd.get("origin", {})
        limits = jd["limits"]
        joints.append(
            Joint(
                name=jd["name"],
                parent=pidx,
                axis=_as_vec3("axis", jd["axis"]),
                origin_xyz=_as_vec3("origin.xyz", origin.get("xyz", [0, 0, 0])),
                origin_rpy=_as_vec3("origin.rpy", origin.get("rpy", [0, 0, 0])),
                lower=float(limits["lower"]),
                upper=float(limits["upper"]),
                accel_limit=float(limits["accel"]),
                jerk_limit=float(limits["jerk"]),
            )
        )
        name_to_idx[jd["name"]] = i

    def frame_idx(ref) -> int:
        if isinstance(ref, int):
            return ref
        if ref not in name_to_idx:
            raise ConfigurationError(f"unknown frame {ref!r}")
        return name_to_idx[ref]

    body_points = [
        AttachedPoint(p["name"], frame_idx(p["frame"]), _as_vec3("offset", p["offset"]))
        for p in doc.get("body_points", [])
    ]
    spheres = []
    for s in doc.get("collision_spheres", []):
        radius = float(s["radius"])
        if radius <= 0:
            raise ConfigurationError(f"sphere {s['name']!r}: radius must be > 0")
        spheres.append(
            CollisionSphere(s["name"], frame_idx(s["frame"]), _as_vec3("offset", s["offset"]), radius)
        )
    return KinematicModel(joints, body_points, spheres)


def load_model(path) -> KinematicModel:
    """Load a robot model from a JSON file."""
    with open(Path(path)) as f:
        return model_from_dict(json.load(f))
