"""3-link planar arm: kinematics, analytic IK, and joint-space dynamics.

Links are uniform rods; the gripper assembly loads the chain as a point mass
at the tip of link 3. All routines are vectorized over a leading batch axis
(scalar wrappers squeeze a batch of one), and all math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom2d import Pose2, wrap_angle


@dataclass(frozen=True)
class ArmSpec:
    """Arm geometry and mass properties plus gripper plumbing constants.

    The pads ride the end-effector; their mass is lumped into tip_mass for
    arm dynamics and into track_mass for the opening DOF (standard lumped
    approximation for a light gripper).
    """

    link_lengths: tuple = (0.4, 0.35, 0.15)
    link_masses: tuple = (2.0, 1.5, 0.5)
    joint_limits_low: tuple = (-0.3, -2.7, -2.7)
    joint_limits_high: tuple = (np.pi + 0.3, 2.7, 2.7)
    gripper_max_opening: float = 0.08
    gripper_force_limit: float = 8.0  # squeeze penetration F/kn stays under 1 mm
    # gripper geometry/servo plumbing
    pad_half_len: float = 0.0225
    pad_half_thickness: float = 0.006
    pad_forward: float = 0.03
    pad_friction: tuple = (1.1, 0.9)
    track_mass: float = 0.1
    tip_mass: float = 0.3
    # gearbox-reflected rotor inertia on the wrist: without it the wrist axis
    # is too light to damp at the 120 Hz torque rate; base joints stay bare so
    # the coupled task modes keep enough damping ratio
    base_armature: tuple = (0.0, 0.0, 0.08)
    servo_kp: float = 400.0
    servo_kd: float = 40.0

    def __post_init__(self):
        if not all(v > 0 for v in self.link_lengths + self.link_masses):
            raise ValueError("link lengths and masses must be positive")
        if not all(lo < hi for lo, hi in zip(self.joint_limits_low, self.joint_limits_high)):
            raise ValueError("joint limits must satisfy lo < hi")

    @property
    def rod_inertias(self) -> np.ndarray:
        m = np.asarray(self.link_masses)
        length = np.asarray(self.link_lengths)
        return m * length**2 / 12.0


DEFAULT_ARM = ArmSpec()


@dataclass(frozen=True)
class ActuatorParams:
    """Per-joint actuator model: Coulomb friction, armature, delay, damping."""

    joint_friction: np.ndarray = field(default_factory=lambda: np.zeros(3))
    armature: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delay_steps: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    joint_damping: np.ndarray = field(default_factory=lambda: np.full(3, 1.0))

    def __post_init__(self):
        fr = np.asarray(self.joint_friction, dtype=np.float64).reshape(3)
        ar = np.asarray(self.armature, dtype=np.float64).reshape(3)
        dl = np.asarray(self.delay_steps, dtype=np.int64).reshape(3)
        dp = np.asarray(self.joint_damping, dtype=np.float64).reshape(3)
        if np.any(fr < 0) or np.any(ar < 0) or np.any(dl < 0) or np.any(dp < 0):
            raise ValueError("actuator parameters must be >= 0")
        if np.any(dl > 8):
            raise ValueError("delay_steps must be <= 8")
        object.__setattr__(self, "joint_friction", fr)
        object.__setattr__(self, "armature", ar)
        object.__setattr__(self, "delay_steps", dl)
        object.__setattr__(self, "joint_damping", dp)

    @staticmethod
    def scalar(friction=0.0, armature=0.0, delay=0, damping=1.0) -> "ActuatorParams":
        return ActuatorParams(
            joint_friction=np.full(3, float(friction)),
            armature=np.full(3, float(armature)),
            delay_steps=np.full(3, int(delay), dtype=np.int64),
            joint_damping=np.full(3, float(damping)),
        )


def _as_batch(q):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        return q[None], True
    return q, False


def joint_positions(q, spec: ArmSpec = DEFAULT_ARM):
    """Absolute link angles and joint/tip positions.

    Returns (angles (N, 3), points (N, 4, 2)) where points[:, i] is joint i's
    origin and points[:, 3] the end-effector tip; base at the world origin.
    """
    qb, _ = _as_batch(q)
    ang = np.cumsum(qb, axis=1)
    c, s = np.cos(ang), np.sin(ang)
    lengths = np.asarray(spec.link_lengths)
    pts = np.zeros((qb.shape[0], 4, 2))
    for i in range(3):
        pts[:, i + 1, 0] = pts[:, i, 0] + lengths[i] * c[:, i]
        pts[:, i + 1, 1] = pts[:, i, 1] + lengths[i] * s[:, i]
    return ang, pts


def fk_batch(q, spec: ArmSpec = DEFAULT_ARM):
    """End-effector poses (N, 3) for joint angles (N, 3)."""
    ang, pts = joint_positions(q, spec)
    return np.concatenate([pts[:, 3], wrap_angle(ang[:, 2])[:, None]], axis=1)


def forward_kinematics(q, spec: ArmSpec = DEFAULT_ARM):
    """FK for one configuration: (ee Pose2, [link frame Pose2; 3]).

    Link frame i sits at joint i's origin with the cumulative link angle.
    """
    ang, pts = joint_positions(np.asarray(q), spec)
    frames = [Pose2(pts[0, i, 0], pts[0, i, 1], ang[0, i]) for i in range(3)]
    ee = Pose2(pts[0, 3, 0], pts[0, 3, 1], ang[0, 2])
    return ee, frames


def jacobian_batch(q, spec: ArmSpec = DEFAULT_ARM):
    """Geometric end-effector Jacobians (N, 3, 3); rows (dx, dy, dtheta)."""
    _, pts = joint_positions(q, spec)
    ee = pts[:, 3]
    J = np.empty((pts.shape[0], 3, 3))
    for i in range(3):
        r = ee - pts[:, i]
        J[:, 0, i] = -r[:, 1]
        J[:, 1, i] = r[:, 0]
        J[:, 2, i] = 1.0
    return J


def jacobian(q, spec: ArmSpec = DEFAULT_ARM) -> np.ndarray:
    return jacobian_batch(np.asarray(q)[None], spec)[0]


def point_jacobian_batch(q, points, spec: ArmSpec = DEFAULT_ARM):
    """Position Jacobian (N, 2, 3) of world points rigidly attached to link 3."""
    _, pts = joint_positions(q, spec)
    J = np.empty((pts.shape[0], 2, 3))
    for i in range(3):
        r = points - pts[:, i]
        J[:, 0, i] = -r[:, 1]
        J[:, 1, i] = r[:, 0]
    return J


def within_limits(q, spec: ArmSpec = DEFAULT_ARM, margin: float = 0.0):
    qb, single = _as_batch(q)
    lo = np.asarray(spec.joint_limits_low) + margin
    hi = np.asarray(spec.joint_limits_high) - margin
    ok = np.all((qb >= lo) & (qb <= hi), axis=1)
    return bool(ok[0]) if single else ok


def inverse_kinematics(target: Pose2, spec: ArmSpec = DEFAULT_ARM, elbow: int = 1):
    """Analytic IK for the 3R chain; returns q or None when unreachable.

    elbow selects the +1 / -1 branch of the elbow angle. Joint limits are
    enforced; callers scan both branches.
    """
    l1, l2, l3 = spec.link_lengths
    wx = target.x - l3 * np.cos(target.theta)
    wy = target.y - l3 * np.sin(target.theta)
    d2 = wx * wx + wy * wy
    ca = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if not -1.0 <= ca <= 1.0:
        return None
    q2 = float(elbow) * np.arccos(ca)
    q1 = np.arctan2(wy, wx) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    q1 = float(wrap_angle(q1))
    q3 = float(wrap_angle(target.theta - q1 - q2))
    q = np.array([q1, q2, q3])
    if not within_limits(q, spec):
        return None
    return q


def _link_props(spec: ArmSpec):
    lengths = np.asarray(spec.link_lengths)
    masses = np.asarray(spec.link_masses)
    return lengths, masses, spec.rod_inertias


def mass_matrix_batch(q, spec: ArmSpec = DEFAULT_ARM, armature=None):
    """Joint-space inertia (N, 3, 3), rods + tip mass + optional armature diag.

    M_ij = sum over bodies k >= max(i, j) of m_k (c_k - p_i).(c_k - p_j) + I_k,
    the com-Jacobian contraction specialized to a planar revolute chain.
    """
    qb, _ = _as_batch(q)
    lengths, masses, inertias = _link_props(spec)
    ang, pts = joint_positions(qb, spec)
    c, s = np.cos(ang), np.sin(ang)
    coms = np.empty((qb.shape[0], 3, 2))
    for k in range(3):
        coms[:, k, 0] = pts[:, k, 0] + 0.5 * lengths[k] * c[:, k]
        coms[:, k, 1] = pts[:, k, 1] + 0.5 * lengths[k] * s[:, k]
    ee = pts[:, 3]

    M = np.zeros((qb.shape[0], 3, 3))
    for i in range(3):
        for j in range(i, 3):
            acc = np.zeros(qb.shape[0])
            for k in range(max(i, j), 3):
                ri = coms[:, k] - pts[:, i]
                rj = coms[:, k] - pts[:, j]
                acc += masses[k] * np.sum(ri * rj, axis=1) + inertias[k]
            ri = ee - pts[:, i]
            rj = ee - pts[:, j]
            acc += spec.tip_mass * np.sum(ri * rj, axis=1)
            M[:, i, j] = acc
            M[:, j, i] = acc
    idx = np.arange(3)
    M[:, idx, idx] += np.asarray(spec.base_armature)
    if armature is not None:
        M[:, idx, idx] += np.asarray(armature)
    return M


def bias_torque_batch(q, qd, spec: ArmSpec = DEFAULT_ARM, gravity: float = 9.81):
    """Coriolis/centrifugal plus gravity torque (N, 3): RNEA with qdd = 0.

    Gravity enters through the standard base-acceleration trick.
    """
    qb, _ = _as_batch(q)
    qdb, _ = _as_batch(qd)
    lengths, masses, _ = _link_props(spec)
    ang, pts = joint_positions(qb, spec)
    c, s = np.cos(ang), np.sin(ang)
    w = np.cumsum(qdb, axis=1)

    n = qb.shape[0]
    pdd = np.zeros((n, 4, 2))
    pdd[:, 0, 1] = gravity
    cdd = np.empty((n, 3, 2))
    for k in range(3):
        dirk = np.stack([c[:, k], s[:, k]], axis=1)
        w2 = (w[:, k] ** 2)[:, None]
        cdd[:, k] = pdd[:, k] - w2 * (0.5 * lengths[k]) * dirk
        pdd[:, k + 1] = pdd[:, k] - w2 * lengths[k] * dirk

    coms = np.empty((n, 3, 2))
    for k in range(3):
        coms[:, k, 0] = pts[:, k, 0] + 0.5 * lengths[k] * c[:, k]
        coms[:, k, 1] = pts[:, k, 1] + 0.5 * lengths[k] * s[:, k]
    ee, eedd = pts[:, 3], pdd[:, 3]

    tau = np.zeros((n, 3))
    for i in range(3):
        for k in range(i, 3):
            r = coms[:, k] - pts[:, i]
            f = masses[k] * cdd[:, k]
            tau[:, i] += r[:, 0] * f[:, 1] - r[:, 1] * f[:, 0]
        r = ee - pts[:, i]
        f = spec.tip_mass * eedd
        tau[:, i] += r[:, 0] * f[:, 1] - r[:, 1] * f[:, 0]
    return tau


def gravity_torque_batch(q, spec: ArmSpec = DEFAULT_ARM, gravity: float = 9.81):
    """Gravity load (N, 3); the exact compensation term used by the controller."""
    qb, _ = _as_batch(q)
    return bias_torque_batch(qb, np.zeros_like(qb), spec, gravity)


def arm_dynamics_batch(q, qd, spec: ArmSpec, armature, gravity: float):
    """Fused per-step dynamics: (M with armature, M^-1, bias) sharing one FK pass."""
    qb = q
    n = qb.shape[0]
    lengths, masses, inertias = _link_props(spec)
    ang = np.cumsum(qb, axis=1)
    c, s = np.cos(ang), np.sin(ang)
    pts = np.zeros((n, 4, 2))
    for i in range(3):
        pts[:, i + 1, 0] = pts[:, i, 0] + lengths[i] * c[:, i]
        pts[:, i + 1, 1] = pts[:, i, 1] + lengths[i] * s[:, i]
    coms = np.empty((n, 3, 2))
    for k in range(3):
        coms[:, k, 0] = pts[:, k, 0] + 0.5 * lengths[k] * c[:, k]
        coms[:, k, 1] = pts[:, k, 1] + 0.5 * lengths[k] * s[:, k]
    ee = pts[:, 3]

    M = np.zeros((n, 3, 3))
    for i in range(3):
        for j in range(i, 3):
            acc = np.zeros(n)
            for k in range(max(i, j), 3):
                ri = coms[:, k] - pts[:, i]
                rj = coms[:, k] - pts[:, j]
                acc += masses[k] * (ri[:, 0] * rj[:, 0] + ri[:, 1] * rj[:, 1]) + inertias[k]
            ri = ee - pts[:, i]
            rj = ee - pts[:, j]
            acc += spec.tip_mass * (ri[:, 0] * rj[:, 0] + ri[:, 1] * rj[:, 1])
            M[:, i, j] = acc
            M[:, j, i] = acc
    idx = np.arange(3)
    M[:, idx, idx] += np.asarray(spec.base_armature) + armature

    w = np.cumsum(qd, axis=1)
    pdd = np.zeros((n, 4, 2))
    pdd[:, 0, 1] = gravity
    cdd = np.empty((n, 3, 2))
    for k in range(3):
        w2 = w[:, k] ** 2
        cdd[:, k, 0] = pdd[:, k, 0] - w2 * (0.5 * lengths[k]) * c[:, k]
        cdd[:, k, 1] = pdd[:, k, 1] - w2 * (0.5 * lengths[k]) * s[:, k]
        pdd[:, k + 1, 0] = pdd[:, k, 0] - w2 * lengths[k] * c[:, k]
        pdd[:, k + 1, 1] = pdd[:, k, 1] - w2 * lengths[k] * s[:, k]
    eedd = pdd[:, 3]
    bias = np.zeros((n, 3))
    for i in range(3):
        for k in range(i, 3):
            r = coms[:, k] - pts[:, i]
            bias[:, i] += masses[k] * (r[:, 0] * cdd[:, k, 1] - r[:, 1] * cdd[:, k, 0])
        r = ee - pts[:, i]
        bias[:, i] += spec.tip_mass * (r[:, 0] * eedd[:, 1] - r[:, 1] * eedd[:, 0])
    return M, invert_3x3_batch(M), bias, ang, pts


def kinetic_energy_batch(q, qd, spec: ArmSpec = DEFAULT_ARM, armature=None):
    qb, _ = _as_batch(q)
    qdb, _ = _as_batch(qd)
    M = mass_matrix_batch(qb, spec, armature)
    return 0.5 * np.einsum("ni,nij,nj->n", qdb, M, qdb)


def potential_energy_batch(q, spec: ArmSpec = DEFAULT_ARM, gravity: float = 9.81):
    qb, _ = _as_batch(q)
    lengths, masses, _ = _link_props(spec)
    ang, pts = joint_positions(qb, spec)
    s = np.sin(ang)
    pe = np.zeros(qb.shape[0])
    for k in range(3):
        com_y = pts[:, k, 1] + 0.5 * lengths[k] * s[:, k]
        pe += masses[k] * gravity * com_y
    pe += spec.tip_mass * gravity * pts[:, 3, 1]
    return pe


def invert_3x3_batch(M: np.ndarray) -> np.ndarray:
    """Adjugate inverse for symmetric positive-definite (N, 3, 3) stacks."""
    a, b, c = M[:, 0, 0], M[:, 0, 1], M[:, 0, 2]
    d, e, f = M[:, 1, 1], M[:, 1, 2], M[:, 2, 2]
    A = d * f - e * e
    B = c * e - b * f
    C = b * e - c * d
    det = a * A + b * B + c * C
    inv = np.empty_like(M)
    inv[:, 0, 0] = A
    inv[:, 0, 1] = B
    inv[:, 0, 2] = C
    inv[:, 1, 0] = B
    inv[:, 1, 1] = a * f - c * c
    inv[:, 1, 2] = b * c - a * e
    inv[:, 2, 0] = C
    inv[:, 2, 1] = b * c - a * e
    inv[:, 2, 2] = a * d - b * b
    return inv / det[:, None, None]
