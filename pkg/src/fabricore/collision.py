"""Signed-distance queries between robot spheres and world primitives.

Every query yields the (d_i, r_i, n̂_i) triple consumed by the collision
fabric terms: signed distance (negative = penetration), closest point on
the other body, and the unit direction from the sphere center to it, plus
the lower-bounded distance d̲_i = max(d_min, d_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import kinematics
from .errors import ConfigurationError
from .rotations import rpy_to_matrix

D_MIN_DEFAULT = 0.015  # m; keeps 1/d̲ terms bounded

KIND_SPHERE = 0
KIND_BOX = 1
KIND_HALFSPACE = 2
_DATA_WIDTH = 15
_DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class SphereObstacle:
    center: np.ndarray
    radius: float

    def packed(self):
        row = np.zeros(_DATA_WIDTH)
        row[0:3] = self.center
        row[3] = self.radius
        return KIND_SPHERE, row


@dataclass(frozen=True)
class BoxObstacle:
    center: np.ndarray
    half_extents: np.ndarray
    rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def packed(self):
        row = np.zeros(_DATA_WIDTH)
        row[0:3] = self.center
        row[3:6] = self.half_extents
        row[6:15] = rpy_to_matrix(self.rpy).reshape(-1)
        return KIND_BOX, row


@dataclass(frozen=True)
class HalfspaceObstacle:
    """Solid region behind a plane; `normal` points out of the solid."""

    point: np.ndarray
    normal: np.ndarray

    def packed(self):
        row = np.zeros(_DATA_WIDTH)
        row[0:3] = self.point
        row[3:6] = self.normal
        return KIND_HALFSPACE, row


@dataclass
class DistanceQuery:
    distance: float  # d_i, signed (m)
    closest_point: np.ndarray  # r_i
    direction: np.ndarray  # n̂_i, zero when degenerate
    bounded_distance: float  # d̲_i = max(d_min, d_i)
    degenerate: bool = False


def _validate_obstacle(obs):
    if isinstance(obs, SphereObstacle):
        if obs.radius <= 0:
            raise ConfigurationError("obstacle sphere radius must be > 0")
    elif isinstance(obs, BoxObstacle):
        if np.any(np.asarray(obs.half_extents) <= 0):
            raise ConfigurationError("box half extents must be > 0")
    elif isinstance(obs, HalfspaceObstacle):
        if abs(np.linalg.norm(obs.normal) - 1.0) > 1e-6:
            raise ConfigurationError("halfspace normal must be a unit vector")
    else:
        raise ConfigurationError(f"unknown obstacle type {type(obs).__name__}")


class CollisionWorld:
    """Immutable set of environment primitives plus the d_min bound."""

    def __init__(self, obstacles=(), d_min: float = D_MIN_DEFAULT):
        if d_min <= 0:
            raise ConfigurationError("d_min must be > 0")
        self.obstacles = list(obstacles)
        for obs in self.obstacles:
            _validate_obstacle(obs)
        self.d_min = float(d_min)
        if self.obstacles:
            packed = [o.packed() for o in self.obstacles]
            self.kinds = np.array([k for k, _ in packed], dtype=np.int64)
            self.data = np.stack([row for _, row in packed])
        else:
            self.kinds = np.zeros(0, dtype=np.int64)
            self.data = np.zeros((0, _DATA_WIDTH))

    def __len__(self):
        return len(self.obstacles)


@njit(cache=True)
def _obstacle_distance(center, radius, kind, row, out_n, out_r):
    """Signed distance from one body sphere to one primitive.

    Fills the direction and closest point in place; returns (d, degenerate).
    """
    if kind == 0:  # sphere
        dx = row[0] - center[0]
        dy = row[1] - center[1]
        dz = row[2] - center[2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < _DEGENERATE_EPS:
            out_n[:] = 0.0
            out_r[0] = row[0]
            out_r[1] = row[1]
            out_r[2] = row[2]
            return -row[3] - radius, True
        s = 1.0 if dist >= row[3] else -1.0
        out_n[0] = s * dx / dist
        out_n[1] = s * dy / dist
        out_n[2] = s * dz / dist
        out_r[0] = row[0] - row[3] * dx / dist
        out_r[1] = row[1] - row[3] * dy / dist
        out_r[2] = row[2] - row[3] * dz / dist
        return dist - row[3] - radius, False

    if kind == 2:  # halfspace
        nx, ny, nz = row[3], row[4], row[5]
        s = (
            nx * (center[0] - row[0])
            + ny * (center[1] - row[1])
            + nz * (center[2] - row[2])
        )
        out_r[0] = center[0] - s * nx
        out_r[1] = center[1] - s * ny
        out_r[2] = center[2] - s * nz
        if abs(s) < _DEGENERATE_EPS:
            out_n[:] = 0.0
            return -radius, True
        sign = 1.0 if s > 0 else -1.0
        out_n[0] = -sign * nx
        out_n[1] = -sign * ny
        out_n[2] = -sign * nz
        return s - radius, False

    # box: transform into box frame, closest point by per-axis clamping
    rel0 = center[0] - row[0]
    rel1 = center[1] - row[1]
    rel2 = center[2] - row[2]
    # u = Rᵀ rel
    u0 = row[6] * rel0 + row[9] * rel1 + row[12] * rel2
    u1 = row[7] * rel0 + row[10] * rel1 + row[13] * rel2
    u2 = row[8] * rel0 + row[11] * rel1 + row[14] * rel2
    h0, h1, h2 = row[3], row[4], row[5]
    c0 = min(max(u0, -h0), h0)
    c1 = min(max(u1, -h1), h1)
    c2 = min(max(u2, -h2), h2)
    d0 = u0 - c0
    d1 = u1 - c1
    d2 = u2 - c2
    outside = d0 * d0 + d1 * d1 + d2 * d2
    if outside > _DEGENERATE_EPS * _DEGENERATE_EPS:
        dist = np.sqrt(outside)
        # back to world: n̂ = −R·delta/dist, closest = center_box + R·clamped
        out_n[0] = -(row[6] * d0 + row[7] * d1 + row[8] * d2) / dist
        out_n[1] = -(row[9] * d0 + row[10] * d1 + row[11] * d2) / dist
        out_n[2] = -(row[12] * d0 + row[13] * d1 + row[14] * d2) / dist
        out_r[0] = row[0] + row[6] * c0 + row[7] * c1 + row[8] * c2
        out_r[1] = row[1] + row[9] * c0 + row[10] * c1 + row[11] * c2
        out_r[2] = row[2] + row[12] * c0 + row[13] * c1 + row[14] * c2
        return dist - radius, False

    # center inside the box: nearest face along the smallest margin
    m0 = h0 - abs(u0)
    m1 = h1 - abs(u1)
    m2 = h2 - abs(u2)
    k = 0
    m = m0
    if m1 < m:
        k, m = 1, m1
    if m2 < m:
        k, m = 2, m2
    if m < _DEGENERATE_EPS:
        out_n[:] = 0.0
        out_r[0] = center[0]
        out_r[1] = center[1]
        out_r[2] = center[2]
        return -radius, True
    c0, c1, c2 = u0, u1, u2
    if k == 0:
        sign = 1.0 if u0 >= 0 else -1.0
        c0 = sign * h0
        ln0, ln1, ln2 = sign, 0.0, 0.0
    elif k == 1:
        sign = 1.0 if u1 >= 0 else -1.0
        c1 = sign * h1
        ln0, ln1, ln2 = 0.0, sign, 0.0
    else:
        sign = 1.0 if u2 >= 0 else -1.0
        c2 = sign * h2
        ln0, ln1, ln2 = 0.0, 0.0, sign
    out_n[0] = row[6] * ln0 + row[7] * ln1 + row[8] * ln2
    out_n[1] = row[9] * ln0 + row[10] * ln1 + row[11] * ln2
    out_n[2] = row[12] * ln0 + row[13] * ln1 + row[14] * ln2
    out_r[0] = row[0] + row[6] * c0 + row[7] * c1 + row[8] * c2
    out_r[1] = row[1] + row[9] * c0 + row[10] * c1 + row[11] * c2
    out_r[2] = row[2] + row[12] * c0 + row[13] * c1 + row[14] * c2
    return -m - radius, False


@njit(cache=True)
def _sphere_pair_distance(ca, ra, cb, rb, out_n, out_r):
    """Query for sphere a against sphere b (direction a → b)."""
    dx = cb[0] - ca[0]
    dy = cb[1] - ca[1]
    dz = cb[2] - ca[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    if dist < _DEGENERATE_EPS:
        out_n[:] = 0.0
        out_r[0] = cb[0]
        out_r[1] = cb[1]
        out_r[2] = cb[2]
        return -rb - ra, True
    s = 1.0 if dist >= rb else -1.0
    out_n[0] = s * dx / dist
    out_n[1] = s * dy / dist
    out_n[2] = s * dz / dist
    out_r[0] = cb[0] - rb * dx / dist
    out_r[1] = cb[1] - rb * dy / dist
    out_r[2] = cb[2] - rb * dz / dist
    return dist - rb - ra, False


def signed_distance(sphere_center, radius, obstacle, d_min: float = D_MIN_DEFAULT) -> DistanceQuery:
    """Signed distance from one body sphere to one world primitive."""
    _validate_obstacle(obstacle)
    if radius <= 0:
        raise ConfigurationError("body sphere radius must be > 0")
    center = np.asarray(sphere_center, dtype=np.float64)
    kind, row = obstacle.packed()
    n = np.zeros(3)
    r = np.zeros(3)
    d, degen = _obstacle_distance(center, float(radius), kind, row, n, r)
    return DistanceQuery(d, r, n, max(d_min, d), bool(degen))


def _resolve_pairs(model, self_pairs):
    pairs = []
    for a, b in self_pairs or ():
        ia = model._sphere_index[a] if isinstance(a, str) else int(a)
        ib = model._sphere_index[b] if isinstance(b, str) else int(b)
        if ia == ib:
            raise ConfigurationError("self-collision pair references one sphere twice")
        pairs.append((ia, ib))
    return pairs


def query_all(model, q, world: CollisionWorld, self_pairs=()):
    """All (sphere, obstacle) and enabled (sphere, sphere) queries.

    Returns (queries, d_tilde): one query list per robot sphere, and the
    per-sphere minimum bounded distance (d_min when a sphere has no queries).

    `self_pairs` is the explicit allowlist of sphere pairs to check; pairs on
    the same or adjacent links are excluded simply by not listing them. Each
    listed pair contributes one query to both spheres' lists.
    """
    frames, offsets, radii = model.sphere_arrays()
    n_s = len(radii)
    pairs = _resolve_pairs(model, self_pairs)
    for ia, ib in pairs:
        if not (0 <= ia < n_s and 0 <= ib < n_s):
            raise ConfigurationError("self-collision pair references unknown sphere")
    centers = kinematics.point_positions(model, q, frames, offsets)

    queries: list[list[DistanceQuery]] = [[] for _ in range(n_s)]
    for s in range(n_s):
        for o in range(len(world)):
            n = np.zeros(3)
            r = np.zeros(3)
            d, degen = _obstacle_distance(
                centers[s], radii[s], world.kinds[o], world.data[o], n, r
            )
            queries[s].append(DistanceQuery(d, r, n, max(world.d_min, d), bool(degen)))
    for ia, ib in pairs:
        for subject, other in ((ia, ib), (ib, ia)):
            n = np.zeros(3)
            r = np.zeros(3)
            d, degen = _sphere_pair_distance(
                centers[subject], radii[subject], centers[other], radii[other], n, r
            )
            queries[subject].append(DistanceQuery(d, r, n, max(world.d_min, d), bool(degen)))

    d_tilde = np.array(
        [
            min((qr.bounded_distance for qr in qs), default=world.d_min)
            for qs in queries
        ]
    )
    return queries, d_tilde
