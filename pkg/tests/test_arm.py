import numpy as np
import pytest

from manip2d.arm import (
    DEFAULT_ARM,
    forward_kinematics,
    fk_batch,
    gravity_torque_batch,
    inverse_kinematics,
    invert_3x3_batch,
    jacobian,
    jacobian_batch,
    bias_torque_batch,
    kinetic_energy_batch,
    mass_matrix_batch,
    point_jacobian_batch,
    potential_energy_batch,
)
from manip2d.geom2d import Pose2, compose, wrap_angle


def test_fk_straight_chain():
    ee, frames = forward_kinematics([0.0, 0.0, 0.0])
    assert ee.as_array() == pytest.approx([0.9, 0.0, 0.0])
    assert frames[1].as_array() == pytest.approx([0.4, 0.0, 0.0])
    assert frames[2].as_array() == pytest.approx([0.75, 0.0, 0.0])


def test_fk_rotated_chain():
    ee, _ = forward_kinematics([np.pi / 2, 0.0, 0.0])
    assert ee.as_array() == pytest.approx([0.0, 0.9, np.pi / 2], abs=1e-12)


def test_fk_matches_compose_chain_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, 3)
        ee, _ = forward_kinematics(q)
        pose = Pose2.identity()
        for qi, li in zip(q, DEFAULT_ARM.link_lengths):
            pose = compose(pose, Pose2(0, 0, qi))
            pose = compose(pose, Pose2(li, 0, 0))
        assert np.allclose(ee.as_array()[:2], pose.as_array()[:2], atol=1e-12)
        assert abs(wrap_angle(ee.theta - pose.theta)) < 1e-12


def test_jacobian_third_row_and_straight_column():
    rng = np.random.default_rng(1)
    for _ in range(20):
        J = jacobian(rng.uniform(-3, 3, 3))
        assert np.allclose(J[2], [1.0, 1.0, 1.0])
    J0 = jacobian([0.0, 0.0, 0.0])
    assert J0[:, 0] == pytest.approx([0.0, 0.9, 1.0])


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(50):
        q = rng.uniform(-2.5, 2.5, 3)
        J = jacobian(q)
        for i in range(3):
            dq = np.zeros(3)
            dq[i] = h
            fp = fk_batch((q + dq)[None])[0]
            fm = fk_batch((q - dq)[None])[0]
            fd = (fp - fm) / (2 * h)
            fd[2] = wrap_angle(fp[2] - fm[2]) / (2 * h)
            scale = np.maximum(np.abs(J[:, i]), 1.0)
            assert np.max(np.abs(fd - J[:, i]) / scale) < 1e-6


def test_ik_roundtrip():
    rng = np.random.default_rng(3)
    found = 0
    for _ in range(300):
        q = rng.uniform(DEFAULT_ARM.joint_limits_low, DEFAULT_ARM.joint_limits_high)
        ee, _ = forward_kinematics(q)
        for elbow in (1, -1):
            sol = inverse_kinematics(ee, elbow=elbow)
            if sol is not None:
                ee2, _ = forward_kinematics(sol)
                assert np.allclose(ee2.as_array()[:2], ee.as_array()[:2], atol=1e-9)
                assert abs(wrap_angle(ee2.theta - ee.theta)) < 1e-9
                found += 1
    assert found > 200


def test_ik_unreachable():
    assert inverse_kinematics(Pose2(2.0, 0.0, 0.0)) is None


def test_mass_matrix_symmetric_pd_and_energy_consistent():
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = rng.uniform(-3, 3, 3)
        qd = rng.uniform(-3, 3, 3)
        M = mass_matrix_batch(q[None])[0]
        assert np.allclose(M, M.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(M) > 0)
        # kinetic energy from per-link point velocities (independent construction):
        # velocity of a point on the chain is sum_i qd_i * perp(point - joint_i)
        lengths = np.asarray(DEFAULT_ARM.link_lengths)
        masses = np.asarray(DEFAULT_ARM.link_masses)
        inertias = DEFAULT_ARM.rod_inertias
        ang = np.cumsum(q)
        w = np.cumsum(qd)
        joints = [np.zeros(2)]
        for k in range(3):
            joints.append(joints[k] + lengths[k] * np.array([np.cos(ang[k]), np.sin(ang[k])]))
        ke = 0.0
        for k in range(3):
            com = joints[k] + 0.5 * lengths[k] * np.array([np.cos(ang[k]), np.sin(ang[k])])
            v = np.zeros(2)
            for i in range(k + 1):
                r = com - joints[i]
                v += qd[i] * np.array([-r[1], r[0]])
            ke += 0.5 * masses[k] * v @ v + 0.5 * inertias[k] * w[k] ** 2
        v = np.zeros(2)
        for i in range(3):
            r = joints[3] - joints[i]
            v += qd[i] * np.array([-r[1], r[0]])
        ke += 0.5 * DEFAULT_ARM.tip_mass * v @ v
        ke += 0.5 * np.sum(np.asarray(DEFAULT_ARM.base_armature) * qd**2)
        assert kinetic_energy_batch(q[None], qd[None])[0] == pytest.approx(ke, rel=1e-10)


def test_gravity_torque_matches_potential_gradient():
    rng = np.random.default_rng(5)
    h = 1e-7
    for _ in range(30):
        q = rng.uniform(-3, 3, 3)
        g = gravity_torque_batch(q[None])[0]
        for i in range(3):
            dq = np.zeros(3)
            dq[i] = h
            fd = (potential_energy_batch((q + dq)[None])[0] - potential_energy_batch((q - dq)[None])[0]) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_bias_matches_lagrangian_finite_differences():
    # tau = d/dt(M qd) - dKE/dq + dPE/dq at qdd = 0 must equal the bias term
    rng = np.random.default_rng(6)
    h = 1e-7
    for _ in range(30):
        q = rng.uniform(-3, 3, 3)
        qd = rng.uniform(-2, 2, 3)
        bias = bias_torque_batch(q[None], qd[None])[0]
        Mdot_qd = (
            mass_matrix_batch((q + h * qd)[None])[0] - mass_matrix_batch((q - h * qd)[None])[0]
        ) / (2 * h) @ qd
        dL_dq = np.zeros(3)
        for i in range(3):
            dq = np.zeros(3)
            dq[i] = h
            ke_p = kinetic_energy_batch((q + dq)[None], qd[None])[0]
            ke_m = kinetic_energy_batch((q - dq)[None], qd[None])[0]
            pe_p = potential_energy_batch((q + dq)[None])[0]
            pe_m = potential_energy_batch((q - dq)[None])[0]
            dL_dq[i] = (ke_p - ke_m) / (2 * h) - (pe_p - pe_m) / (2 * h)
        expect = Mdot_qd - dL_dq
        assert np.allclose(bias, expect, atol=1e-5)


def test_point_jacobian_matches_fd():
    rng = np.random.default_rng(7)
    h = 1e-6
    local = np.array([0.03, -0.02])
    for _ in range(20):
        q = rng.uniform(-2.5, 2.5, 3)
        ee = fk_batch(q[None])[0]
        c, s = np.cos(ee[2]), np.sin(ee[2])
        pt = ee[:2] + np.array([local[0] * c - local[1] * s, local[0] * s + local[1] * c])
        Jp = point_jacobian_batch(q[None], pt[None])[0]
        for i in range(3):
            dq = np.zeros(3)
            dq[i] = h
            def world_point(qq):
                e = fk_batch(qq[None])[0]
                cc, ss = np.cos(e[2]), np.sin(e[2])
                return e[:2] + np.array([local[0] * cc - local[1] * ss, local[0] * ss + local[1] * cc])
            fd = (world_point(q + dq) - world_point(q - dq)) / (2 * h)
            assert np.allclose(Jp[:, i], fd, atol=1e-6)


def test_invert_3x3():
    rng = np.random.default_rng(8)
    for _ in range(50):
        A = rng.normal(size=(3, 3))
        M = A @ A.T + 0.1 * np.eye(3)
        inv = invert_3x3_batch(M[None])[0]
        assert np.allclose(inv @ M, np.eye(3), atol=1e-9)
