"""Independent oracles shared across the test suite.

Everything here is deliberately written against plain numpy (homogeneous
transform stacking, finite differences, dense einsum assembly) so it stays
decoupled from the library's analytic/kernel implementations.
"""

import numpy as np


def rotation_about(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    omc = 1.0 - c
    return np.array(
        [
            [c + x * x * omc, x * y * omc - z * s, x * z * omc + y * s],
            [y * x * omc + z * s, c + y * y * omc, y * z * omc - x * s],
            [z * x * omc - y * s, z * y * omc + x * s, c + z * z * omc],
        ]
    )


def rpy_matrix(rpy):
    r, p, y = rpy
    rx = rotation_about([1, 0, 0], r)
    ry = rotation_about([0, 1, 0], p)
    rz = rotation_about([0, 0, 1], y)
    return rz @ ry @ rx


def homogeneous(rot, pos):
    t = np.eye(4)
    t[:3, :3] = rot
    t[:3, 3] = pos
    return t


def chain_transforms(model, q):
    """World transform of every joint frame by explicit 4x4 stacking."""
    transforms = []
    for i, joint in enumerate(model.joints):
        local = homogeneous(rpy_matrix(joint.origin_rpy), joint.origin_xyz) @ homogeneous(
            rotation_about(joint.axis, q[i]), np.zeros(3)
        )
        if joint.parent < 0:
            transforms.append(local)
        else:
            transforms.append(transforms[joint.parent] @ local)
    return transforms


def chain_point(model, q, frame, offset):
    t = chain_transforms(model, q)[frame]
    return t[:3, :3] @ np.asarray(offset, float) + t[:3, 3]


def chain_points(model, q, frames, offsets):
    return np.stack([chain_point(model, q, f, o) for f, o in zip(frames, offsets)])


def chain_jacobian(model, q, frames, offsets):
    """Geometric Jacobian from the transform chain (independent analytic path)."""
    transforms = chain_transforms(model, q)
    n = model.dof_count
    pts = chain_points(model, q, frames, offsets)
    jac = np.zeros((len(frames), 3, n))
    for m, f in enumerate(frames):
        j = int(f)
        while j >= 0:
            axis_w = transforms[j][:3, :3] @ model.joints[j].axis
            jac[m, :, j] = np.cross(axis_w, pts[m] - transforms[j][:3, 3])
            j = model.joints[j].parent
    return jac


def fd_jacobian(fn, q, h=1e-6):
    """Central-difference Jacobian of a vector function of q."""
    q = np.asarray(q, dtype=float)
    f0 = np.asarray(fn(q))
    jac = np.zeros((f0.shape[0], q.shape[0]))
    for j in range(q.shape[0]):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        jac[:, j] = (np.asarray(fn(qp)) - np.asarray(fn(qm))) / (2 * h)
    return jac


def random_revolute_model(rng, n=3, spheres=1):
    """Random serial revolute chain with unit-ish links and one tip point."""
    from fabricore.kinematics import AttachedPoint, CollisionSphere, Joint, KinematicModel

    joints = []
    for i in range(n):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        joints.append(
            Joint(
                name=f"j{i}",
                parent=i - 1,
                axis=axis,
                origin_xyz=rng.uniform(-0.4, 0.4, 3),
                origin_rpy=rng.uniform(-0.8, 0.8, 3),
                lower=-2.5,
                upper=2.5,
                accel_limit=10.0,
                jerk_limit=10000.0,
            )
        )
    points = [AttachedPoint("tip", n - 1, rng.uniform(-0.3, 0.3, 3))]
    sphere_list = [
        CollisionSphere(f"s{k}", int(rng.integers(0, n)), rng.uniform(-0.2, 0.2, 3), rng.uniform(0.03, 0.08))
        for k in range(spheres)
    ]
    return KinematicModel(joints, points, sphere_list)


def dense_resolve_oracle(engine, state, action):
    """Brute-force metric-weighted pullback with FD Jacobians.

    Task Jacobians come from central differences of the taskmap positions;
    the curvature input applies the engine's pinned directional-difference
    rule to the independent transform-chain Jacobian (differencing the FD
    Jacobian itself would amplify its roundoff noise past the comparison
    tolerance).
    """
    from fabricore import taskmaps, terms
    from fabricore.collision import query_all
    from fabricore.engine import MODE_CSPACE
    from fabricore.kinematics import CURVATURE_EPS, JointState

    model, world, cfg = engine.model, engine.world, engine.config
    n = model.dof_count
    q, qd = state.q, state.qd

    def point_phi(frames, offsets):
        return lambda qq: chain_points(model, qq, frames, offsets).reshape(-1)

    def point_entry(frames, offsets):
        phi = point_phi(frames, offsets)
        x = phi(q)
        jac = fd_jacobian(phi, q)
        j0 = chain_jacobian(model, q, frames, offsets).reshape(-1, n)
        j1 = chain_jacobian(model, q + CURVATURE_EPS * qd, frames, offsets).reshape(-1, n)
        curv = (j1 - j0) @ qd / CURVATURE_EPS
        return x, jac @ qd, jac, curv

    entries = []
    queries, _ = query_all(model, q, world, cfg.self_pairs)
    sph_frames, sph_offsets, _ = model.sphere_arrays()
    for s, qs in enumerate(queries):
        if not qs:
            continue
        x, xd, jac, curv = point_entry(sph_frames[s : s + 1], sph_offsets[s : s + 1])
        geo = terms.collision_geometric(qs, xd, cfg.collision)
        frc = terms.collision_forcing(qs, xd, cfg.collision)
        entries.append((jac, curv, geo.metric, geo.accel))
        entries.append((jac, curv, frc.metric, frc.accel))

    st = JointState(q, qd)
    up = taskmaps.JointLimitUpperMap(n).evaluate(model, st)
    lo = taskmaps.JointLimitLowerMap(n).evaluate(model, st)
    out_u = terms.joint_limit_repulsion(up.x, up.xd, cfg.joint_limit)
    out_l = terms.joint_limit_repulsion(lo.x, lo.xd, cfg.joint_limit)
    entries.append((up.jac, up.curvature, out_u.metric, out_u.accel))
    entries.append((lo.jac, lo.curvature, out_l.metric, out_l.accel))

    eye = np.eye(n)
    if cfg.mode == MODE_CSPACE:
        out = terms.attraction_forced(q, qd, action.q_target, cfg.cspace_attraction)
        entries.append((eye, np.zeros(n), out.metric, out.accel))
    else:
        amat = engine.pca_map.matrix
        out = terms.attraction_forced(amat @ q, amat @ qd, action.pca, cfg.pca_attraction)
        entries.append((amat, np.zeros(amat.shape[0]), out.metric, out.accel))
        x, xd, jac, curv = point_entry(engine.palm_map.frames, engine.palm_map.offsets)
        targets = engine.palm_map.pose_to_targets(action.palm_pos, action.palm_rpy)
        out = terms.attraction_forced(x, xd, targets, cfg.pose_attraction)
        entries.append((jac, curv, out.metric, out.accel))

    out = terms.attraction_geometric_hd2(q, qd, engine._posture_target, cfg.posture)
    entries.append((eye, np.zeros(n), out.metric, out.accel))
    out = terms.cspace_damping(qd, cfg.cspace_damping)
    entries.append((eye, np.zeros(n), out.metric, out.accel))

    m_q = cfg.lambda_reg * np.eye(n)
    f_q = np.zeros(n)
    for jac, curv, metric, accel in entries:
        m_q += np.einsum("ia,ij,jb->ab", jac, metric, jac)
        f_q += jac.T @ (metric @ (accel - curv))
    return np.linalg.solve(m_q, f_q)
