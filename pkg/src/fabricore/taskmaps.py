"""Differentiable maps x = φ(q) with Jacobian and curvature.

These are the spaces fabric terms are authored in: attached body points,
linear projections (the hand PCA coordinates), the identity map, and the
joint-limit distance maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kinematics
from .errors import ConfigurationError
from .rotations import rpy_to_matrix

# Palm origin plus ±0.1 m along the palm's local axes: any rigid
# non-degenerate 7-point set encodes full pose; the symmetric layout makes
# orientation error isotropic.
DEFAULT_PALM_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.1, 0.0, 0.0],
        [-0.1, 0.0, 0.0],
        [0.0, 0.1, 0.0],
        [0.0, -0.1, 0.0],
        [0.0, 0.0, 0.1],
        [0.0, 0.0, -0.1],
    ]
)


@dataclass
class TaskEval:
    """Task-space position, velocity, Jacobian, and curvature J̇q̇."""

    x: np.ndarray
    xd: np.ndarray
    jac: np.ndarray
    curvature: np.ndarray


class Taskmap:
    """Base taskmap; subclasses fix `kind` and implement `evaluate`."""

    kind = "abstract"
    dim = 0

    def evaluate(self, model, state) -> TaskEval:
        raise NotImplementedError


class IdentityMap(Taskmap):
    kind = "identity"

    def __init__(self, n: int):
        self.dim = n

    def evaluate(self, model, state):
        self._check(state)
        n = self.dim
        return TaskEval(state.q.copy(), state.qd.copy(), np.eye(n), np.zeros(n))

    def _check(self, state):
        if state.q.shape[0] != self.dim:
            raise ConfigurationError(f"{self.kind} map expects dimension {self.dim}")


class LinearMap(Taskmap):
    """x = A q (plus optional constant offset)."""

    kind = "linear"

    def __init__(self, matrix: np.ndarray, offset=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or not np.isfinite(matrix).all():
            raise ConfigurationError("linear taskmap matrix must be a finite 2-D array")
        if matrix.shape[0] > matrix.shape[1]:
            raise ConfigurationError("linear taskmap must not expand dimension (k <= n)")
        self.matrix = matrix
        self.offset = np.zeros(matrix.shape[0]) if offset is None else np.asarray(offset, float)
        self.dim = matrix.shape[0]

    def evaluate(self, model, state):
        if state.q.shape[0] != self.matrix.shape[1]:
            raise ConfigurationError(
                f"linear map expects {self.matrix.shape[1]} joints, got {state.q.shape[0]}"
            )
        x = self.matrix @ state.q + self.offset
        return TaskEval(x, self.matrix @ state.qd, self.matrix.copy(), np.zeros(self.dim))


class JointLimitUpperMap(Taskmap):
    """x = q̄ − q: distance below each upper joint limit."""

    kind = "joint_limit_upper"

    def __init__(self, n: int):
        self.dim = n

    def evaluate(self, model, state):
        n = self.dim
        x = model.upper_limits - state.q
        return TaskEval(x, -state.qd, -np.eye(n), np.zeros(n))


class JointLimitLowerMap(Taskmap):
    """x = q − q̲: distance above each lower joint limit."""

    kind = "joint_limit_lower"

    def __init__(self, n: int):
        self.dim = n

    def evaluate(self, model, state):
        n = self.dim
        x = state.q - model.lower_limits
        return TaskEval(x, state.qd, np.eye(n), np.zeros(n))


class AttachedPointsMap(Taskmap):
    """Stacked world positions of rigid points attached to joint frames."""

    kind = "body_points"

    def __init__(self, frames: np.ndarray, offsets: np.ndarray):
        self.frames = np.asarray(frames, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.float64)
        if self.offsets.shape != (len(self.frames), 3):
            raise ConfigurationError("offsets must be (k, 3)")
        self.dim = 3 * len(self.frames)

    def evaluate(self, model, state):
        pos = kinematics.point_positions(model, state.q, self.frames, self.offsets)
        jac = kinematics.point_jacobians(model, state.q, self.frames, self.offsets)
        jac = jac.reshape(self.dim, model.dof_count)
        curv = kinematics.point_curvatures(
            model, state.q, state.qd, self.frames, self.offsets
        ).reshape(self.dim)
        return TaskEval(pos.reshape(self.dim), jac @ state.qd, jac, curv)


class BodyPointsMap(AttachedPointsMap):
    """AttachedPointsMap referencing named body points of a model."""

    def __init__(self, model, point_ids):
        frames, offsets = model.resolve_points(point_ids)
        super().__init__(frames, offsets)
        self.point_ids = list(point_ids)


class PalmPoseMap(AttachedPointsMap):
    """Seven palm-fixed points stacked into a 21-D pose space."""

    kind = "body_points"

    def __init__(self, palm_frame: int, offsets=None):
        offsets = DEFAULT_PALM_OFFSETS if offsets is None else np.asarray(offsets, float)
        if offsets.shape != (7, 3):
            raise ConfigurationError("palm pose map needs exactly 7 local points")
        super().__init__(np.full(7, palm_frame, dtype=np.int64), offsets)
        self.palm_frame = palm_frame

    def pose_to_targets(self, position, rpy) -> np.ndarray:
        return pose_to_targets(position, rpy, self.offsets)


def evaluate(taskmap: Taskmap, model, state) -> TaskEval:
    return taskmap.evaluate(model, state)


def pca_taskmap(basis, n: int, hand_offset: int) -> LinearMap:
    """Embed the 5×16 hand PCA basis into an n-DOF linear taskmap.

    Columns outside [hand_offset, hand_offset+16) are zero, so arm joints do
    not move the PCA coordinates.
    """
    a = np.asarray(getattr(basis, "components", basis), dtype=np.float64)
    if a.ndim != 2:
        raise ConfigurationError("PCA basis must be a 2-D matrix")
    k, h = a.shape
    if hand_offset < 0 or hand_offset + h > n:
        raise ConfigurationError(
            f"hand columns [{hand_offset}, {hand_offset + h}) do not fit in {n} dofs"
        )
    full = np.zeros((k, n))
    full[:, hand_offset : hand_offset + h] = a
    return LinearMap(full)


def palm_pose_taskmap(model, palm_frame, offsets=None) -> PalmPoseMap:
    """Palm pose taskmap on a joint frame given by name or index."""
    idx = model.joint_id(palm_frame) if isinstance(palm_frame, str) else int(palm_frame)
    if not (0 <= idx < model.dof_count):
        raise ConfigurationError(f"palm frame index {idx} out of range")
    return PalmPoseMap(idx, offsets)


def pose_to_targets(position, rpy, offsets=None) -> np.ndarray:
    """Transform the palm-local points by a commanded pose, stacked to 3k.

    `rpy` is extrinsic XYZ (roll-pitch-yaw, radians).
    """
    offsets = DEFAULT_PALM_OFFSETS if offsets is None else np.asarray(offsets, float)
    rot = rpy_to_matrix(rpy)
    pos = np.asarray(position, dtype=np.float64)
    return (offsets @ rot.T + pos).reshape(-1)
