import numpy as np
import pytest

from fabricore.errors import ConfigurationError
from fabricore.kinematics import (
    AttachedPoint,
    JointState,
    Joint,
    KinematicModel,
    curvature_term,
    forward_points,
    jacobian,
    model_from_dict,
)

from helpers import chain_points, fd_jacobian, random_revolute_model


def single_z_joint(point=(1.0, 0.0, 0.0)):
    j = Joint("j0", -1, np.array([0.0, 0.0, 1.0]), np.zeros(3), np.zeros(3), -3.0, 3.0, 10.0, 1e4)
    return KinematicModel([j], [AttachedPoint("tip", 0, np.asarray(point, float))])


def test_forward_identity_pose():
    m = single_z_joint()
    np.testing.assert_allclose(forward_points(m, [0.0], ["tip"]), [[1.0, 0.0, 0.0]], atol=1e-15)


def test_forward_quarter_turn():
    m = single_z_joint()
    np.testing.assert_allclose(
        forward_points(m, [np.pi / 2], ["tip"]), [[0.0, 1.0, 0.0]], atol=1e-12
    )


def test_forward_matches_transform_chain_oracle(rng):
    for _ in range(10):
        m = random_revolute_model(rng)
        q = rng.uniform(-1.5, 1.5, m.dof_count)
        frames, offsets = m.resolve_points(["tip"])
        got = forward_points(m, q, ["tip"])
        want = chain_points(m, q, frames, offsets)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_jacobian_single_joint_column():
    m = single_z_joint()
    np.testing.assert_allclose(jacobian(m, [0.0], ["tip"]), [[0.0], [1.0], [0.0]], atol=1e-15)


def test_jacobian_zero_lever_arm():
    m = single_z_joint(point=(0.0, 0.0, 0.5))  # point on the rotation axis
    np.testing.assert_allclose(jacobian(m, [0.3], ["tip"]), np.zeros((3, 1)), atol=1e-15)


def test_jacobian_matches_finite_differences(rng):
    for _ in range(100):
        m = random_revolute_model(rng)
        q = rng.uniform(-1.5, 1.5, m.dof_count)
        frames, offsets = m.resolve_points(["tip"])
        jac = jacobian(m, q, ["tip"])
        jac_fd = fd_jacobian(lambda qq: chain_points(m, qq, frames, offsets).reshape(-1), q)
        np.testing.assert_allclose(jac, jac_fd, atol=1e-5)


def test_curvature_zero_velocity(rng):
    m = random_revolute_model(rng)
    q = rng.uniform(-1, 1, m.dof_count)
    np.testing.assert_array_equal(curvature_term(m, q, np.zeros(m.dof_count), ["tip"]), np.zeros(3))


def test_curvature_centripetal_circle():
    # unit-radius point spinning at 1 rad/s: J̇q̇ = centripetal accel (−1, 0, 0)
    m = single_z_joint()
    curv = curvature_term(m, [0.0], [1.0], ["tip"])
    np.testing.assert_allclose(curv, [-1.0, 0.0, 0.0], atol=1e-5)


def test_forward_points_lipschitz(rng):
    # C¹ in q: |x(q+δ) − x(q)| ≤ L‖δ‖₁ with L = total link length
    for _ in range(20):
        m = random_revolute_model(rng)
        frames, offsets = m.resolve_points(["tip"])
        total_len = sum(np.linalg.norm(j.origin_xyz) for j in m.joints) + np.linalg.norm(offsets[0])
        q = rng.uniform(-1.5, 1.5, m.dof_count)
        delta = rng.uniform(-0.01, 0.01, m.dof_count)
        x0 = forward_points(m, q, ["tip"])[0]
        x1 = forward_points(m, q + delta, ["tip"])[0]
        assert np.linalg.norm(x1 - x0) <= total_len * np.abs(delta).sum() + 1e-12


def test_unknown_point_id_rejected(planar_model):
    with pytest.raises(ConfigurationError):
        forward_points(planar_model, np.zeros(3), ["nope"])


def test_wrong_q_length_rejected(planar_model):
    with pytest.raises(ConfigurationError):
        forward_points(planar_model, np.zeros(5), ["tip"])


def test_prismatic_joints_rejected():
    doc = {
        "joints": [
            {
                "name": "slide",
                "parent": None,
                "type": "prismatic",
                "axis": [0, 0, 1],
                "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]},
                "limits": {"lower": -1, "upper": 1, "accel": 1, "jerk": 1},
            }
        ]
    }
    with pytest.raises(ConfigurationError):
        model_from_dict(doc)


def test_limit_validation():
    j = Joint("j", -1, np.array([0.0, 0, 1]), np.zeros(3), np.zeros(3), 1.0, -1.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        KinematicModel([j])
    j2 = Joint("j", -1, np.array([0.0, 0, 1]), np.zeros(3), np.zeros(3), -1.0, 1.0, -2.0, 1.0)
    with pytest.raises(ConfigurationError):
        KinematicModel([j2])


def test_joint_state_must_be_finite():
    with pytest.raises(ConfigurationError):
        JointState(np.array([np.nan]), np.array([0.0]))


def test_parent_must_precede():
    j0 = Joint("a", 1, np.array([0.0, 0, 1]), np.zeros(3), np.zeros(3), -1, 1, 1, 1)
    j1 = Joint("b", -1, np.array([0.0, 0, 1]), np.zeros(3), np.zeros(3), -1, 1, 1, 1)
    with pytest.raises(ConfigurationError):
        KinematicModel([j0, j1])


def test_bundled_23dof_model(desk_model):
    assert desk_model.dof_count == 23
    assert len(desk_model.collision_spheres) >= 10
    tips = forward_points(desk_model, np.zeros(23), ["tip_index", "tip_middle", "tip_ring", "tip_thumb"])
    assert tips.shape == (4, 3)
    assert np.isfinite(tips).all()
