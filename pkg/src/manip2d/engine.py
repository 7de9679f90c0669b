"""Batched rigid-body simulator: the transition kernel.

State of all N environments is kept in structure-of-arrays form; `step` and
`step_batch` wrap the same kernel, so a batch of one is bitwise identical to
the scalar path. Contacts use the penalty law f_n = max(0, kn*pen - kd*v_n)
evaluated implicitly in the post-impulse normal velocity, which keeps the
stiff spec defaults stable at dt = 1/120 for the lightest randomized objects.
Friction is tanh-regularized Coulomb with an exact-stiction impulse cap.
"""

from __future__ import annotations

import numpy as np

from .arm import ActuatorParams, ArmSpec, DEFAULT_ARM, arm_dynamics_batch, invert_3x3_batch
from .geom2d import ConvexPolygon, Pose2, Twist2, sat_contact_batch, wrap_angle
from .world import (
    DELAY_SLOTS,
    GRIPPER_CLOSE,
    GRIPPER_OPEN,
    BodyState,
    SceneSpec,
    SimParams,
    Workspace,
    DEFAULT_WORKSPACE,
    WorldState,
)

PAD_L, PAD_R = -1, -2  # pseudo-body indices for the finger pads
QD_LIMIT = 8.0  # rad/s joint speed saturation, a motor property


def pad_local_vertices(arm: ArmSpec) -> np.ndarray:
    return ConvexPolygon.box(arm.pad_half_len, arm.pad_half_thickness).vertices


def pad_poses_from_ee(ee: np.ndarray, opening: np.ndarray, arm: ArmSpec):
    """World poses (N, 3) of the left/right finger pads.

    Pads sit pad_forward ahead of the tip along the gripper x axis and are
    separated along the gripper y axis by the opening plus pad thickness.
    """
    c, s = np.cos(ee[:, 2]), np.sin(ee[:, 2])
    off = 0.5 * opening + arm.pad_half_thickness
    fx, fy = arm.pad_forward * c, arm.pad_forward * s
    padl = np.stack([ee[:, 0] + fx + off * s, ee[:, 1] + fy - off * c, ee[:, 2]], axis=1)
    padr = np.stack([ee[:, 0] + fx - off * s, ee[:, 1] + fy + off * c, ee[:, 2]], axis=1)
    return padl, padr


class BatchSim:
    """N independent worlds stepped together; one target object per world."""

    def __init__(self, n, body_template, params: SimParams, arm: ArmSpec, goal=None):
        self.n = int(n)
        self.params = params
        self.arm = arm
        b = len(body_template)
        self.n_bodies = b
        self.shapes = [bs.shape for bs in body_template]
        self.local_verts = [bs.shape.vertices for bs in body_template]
        self.radii = np.array([bs.shape.radius for bs in body_template])
        self.is_static = np.array([bs.is_static for bs in body_template])
        dyn = np.nonzero(~self.is_static)[0]
        self.target_idx = int(dyn[0]) if len(dyn) else None

        self.mass = np.tile([bs.mass for bs in body_template], (n, 1)).astype(np.float64)
        self.inertia = np.tile([bs.inertia for bs in body_template], (n, 1)).astype(np.float64)
        self.fric_s = np.tile([bs.friction[0] for bs in body_template], (n, 1)).astype(np.float64)
        self.fric_d = np.tile([bs.friction[1] for bs in body_template], (n, 1)).astype(np.float64)
        self.pad_fric_s = np.full(n, arm.pad_friction[0])
        self.pad_fric_d = np.full(n, arm.pad_friction[1])

        act = ActuatorParams()
        self.act_friction = np.tile(act.joint_friction, (n, 1))
        self.act_armature = np.tile(act.armature, (n, 1))
        self.act_delay = np.tile(act.delay_steps, (n, 1))
        self.act_damping = np.tile(act.joint_damping, (n, 1))
        self.servo_kp = np.full(n, arm.servo_kp)
        self.servo_kd = np.full(n, arm.servo_kd)
        self.servo_flim = np.full(n, arm.gripper_force_limit)
        self.track_mass = np.full(n, arm.track_mass)

        self.q = np.zeros((n, 3))
        self.qd = np.zeros((n, 3))
        self.grip = np.full(n, arm.gripper_max_opening)
        self.grip_vel = np.zeros(n)
        self.grip_cmd = np.zeros(n, dtype=np.int64)  # 0 open, 1 close
        self.body_pose = np.tile(
            np.array([bs.pose.as_array() for bs in body_template]), (n, 1, 1)
        )
        self.body_twist = np.tile(
            np.array([bs.twist.as_array() for bs in body_template]), (n, 1, 1)
        )
        self.goal = np.zeros((n, 3)) if goal is None else np.tile(goal, (n, 1))
        self.tau_buf = np.zeros((n, DELAY_SLOTS, 3))
        self.cursor = 0
        self.time = np.zeros(n)
        self.abnormal = np.zeros(n, dtype=bool)

        self.pad_touch = np.zeros((n, 2), dtype=bool)
        # ground fast path: a static unrotated box whose top face is the floor
        self.ground_idx = None
        self.ground_top = None
        for i, bs in enumerate(body_template):
            if bs.is_static and abs(bs.pose.theta) < 1e-12 and bs.shape.radius > 0.5:
                self.ground_idx = i
                self.ground_top = float(bs.pose.y + np.max(bs.shape.vertices[:, 1]))
                break
        self._pairs = self._build_pairs()
        self._rows3 = np.arange(3)
        self._pad_verts = pad_local_vertices(arm)
        self._pad_radius = float(np.hypot(arm.pad_half_len, arm.pad_half_thickness))

    # ------------------------------------------------------------------ setup

    def _build_pairs(self):
        pairs = []
        b = self.n_bodies
        for i in range(b):
            for j in range(i + 1, b):
                if self.is_static[i] and self.is_static[j]:
                    continue
                pairs.append((i, j))
        for i in range(b):
            pairs.append((PAD_L, i))
            pairs.append((PAD_R, i))
        return pairs

    @classmethod
    def from_scene(cls, scene: SceneSpec, n, params=None, arm=None):
        params = params or SimParams()
        arm = arm or DEFAULT_ARM
        goal_x = 0.5 * (scene.goal_x[0] + scene.goal_x[1])
        template = scene.body_states(goal_x)
        sim = cls(n, template, params, arm, goal=scene.goal_pose(goal_x).as_array())
        return sim

    @classmethod
    def from_worlds(cls, worlds, actuators, params=None, arm=None):
        params = params or SimParams()
        arm = arm or DEFAULT_ARM
        ref = worlds[0]
        for w in worlds[1:]:
            if len(w.bodies) != len(ref.bodies):
                raise ValueError("all worlds in a batch must share the body layout")
            for a, b in zip(w.bodies, ref.bodies):
                if not np.array_equal(a.shape.vertices, b.shape.vertices):
                    raise ValueError("all worlds in a batch must share body shapes")
        n = len(worlds)
        sim = cls(n, ref.bodies, params, arm)
        for k, w in enumerate(worlds):
            sim.q[k] = w.q
            sim.qd[k] = w.qd
            sim.grip[k] = w.gripper_opening
            sim.grip_vel[k] = w.gripper_vel
            sim.grip_cmd[k] = 1 if w.gripper_command == GRIPPER_CLOSE else 0
            for bi, bs in enumerate(w.bodies):
                sim.body_pose[k, bi] = bs.pose.as_array()
                sim.body_twist[k, bi] = bs.twist.as_array()
                sim.mass[k, bi] = bs.mass
                sim.inertia[k, bi] = bs.inertia
                sim.fric_s[k, bi] = bs.friction[0]
                sim.fric_d[k, bi] = bs.friction[1]
            sim.goal[k] = w.goal.as_array()
            buf = np.asarray(w.torque_delay_buffer)
            for j in range(DELAY_SLOTS):
                sim.tau_buf[k, DELAY_SLOTS - 1 - j] = buf[j]
            sim.time[k] = w.time
            sim.abnormal[k] = w.abnormal
        if actuators is not None:
            acts = [actuators] * n if isinstance(actuators, ActuatorParams) else list(actuators)
            for k, a in enumerate(acts):
                sim.act_friction[k] = a.joint_friction
                sim.act_armature[k] = a.armature
                sim.act_delay[k] = a.delay_steps
                sim.act_damping[k] = a.joint_damping
        return sim

    def to_worlds(self):
        out = []
        for k in range(self.n):
            bodies = []
            for bi in range(self.n_bodies):
                bodies.append(
                    BodyState(
                        pose=Pose2.from_array(self.body_pose[k, bi]),
                        twist=Twist2.from_array(self.body_twist[k, bi]),
                        shape=self.shapes[bi],
                        mass=float(self.mass[k, bi]),
                        inertia=float(self.inertia[k, bi]),
                        friction=(float(self.fric_s[k, bi]), float(self.fric_d[k, bi])),
                        is_static=bool(self.is_static[bi]),
                    )
                )
            buf = np.empty((DELAY_SLOTS, 3))
            for j in range(DELAY_SLOTS):
                buf[j] = self.tau_buf[k, (self.cursor - 1 - j) % DELAY_SLOTS]
            out.append(
                WorldState(
                    q=self.q[k].copy(),
                    qd=self.qd[k].copy(),
                    gripper_opening=float(self.grip[k]),
                    gripper_command=GRIPPER_CLOSE if self.grip_cmd[k] else GRIPPER_OPEN,
                    bodies=bodies,
                    goal=Pose2.from_array(self.goal[k]),
                    torque_delay_buffer=buf,
                    time=float(self.time[k]),
                    gripper_vel=float(self.grip_vel[k]),
                    abnormal=bool(self.abnormal[k]),
                )
            )
        return out

    # ------------------------------------------------------------- kinematics

    def _chain(self):
        """Cumulative angles (N, 3) and joint/tip points (N, 4, 2)."""
        ang = np.cumsum(self.q, axis=1)
        c, s = np.cos(ang), np.sin(ang)
        lengths = np.asarray(self.arm.link_lengths)
        pts = np.zeros((self.n, 4, 2))
        for i in range(3):
            pts[:, i + 1, 0] = pts[:, i, 0] + lengths[i] * c[:, i]
            pts[:, i + 1, 1] = pts[:, i, 1] + lengths[i] * s[:, i]
        return ang, pts

    def ee_pose(self):
        ang, pts = self._chain()
        return np.concatenate([pts[:, 3], wrap_angle(ang[:, 2])[:, None]], axis=1)

    # ------------------------------------------------------------------ step

    def step(self, taus: np.ndarray):
        """Advance every world by one sim step of params.dt under commanded taus."""
        p = self.params
        taus = np.asarray(taus, dtype=np.float64).reshape(self.n, 3)
        self.tau_buf[:, self.cursor] = taus
        slot = (self.cursor - self.act_delay) % DELAY_SLOTS  # (N, 3)
        applied = self.tau_buf[np.arange(self.n)[:, None], slot, self._rows3[None, :]]
        self.cursor = (self.cursor + 1) % DELAY_SLOTS

        self.pad_touch[:] = False
        h = p.dt / p.substeps
        for _ in range(p.substeps):
            self._substep(h, applied)
        self.time += p.dt

        bad = (
            np.isnan(self.q).any(axis=1)
            | np.isnan(self.qd).any(axis=1)
            | np.isnan(self.grip)
            | np.isnan(self.body_pose).any(axis=(1, 2))
            | np.isnan(self.body_twist).any(axis=(1, 2))
        )
        self.abnormal |= bad

    def _substep(self, h, applied):
        p = self.params
        arm = self.arm
        qd_pre = self.qd
        grip_vel_pre = self.grip_vel
        twist_pre = self.body_twist.copy()

        M, Minv, bias, ang, pts = arm_dynamics_batch(
            self.q, self.qd, arm, self.act_armature, p.gravity
        )
        # plant viscous damping handled implicitly: (M + h D) qd' = M qd + h tau,
        # which stays stable for any damping level at the 120 Hz rate
        M[:, self._rows3, self._rows3] += h * self.act_damping
        Minv = invert_3x3_batch(M)
        ee = np.concatenate([pts[:, 3], ang[:, 2:3]], axis=1)

        # joint Coulomb friction: tanh-regularized, capped by the exact
        # stopping torque so the stiction slope cannot destabilize the step
        i_eff = 1.0 / np.maximum(Minv[:, self._rows3, self._rows3], 1e-12)
        cap = self.act_friction * np.abs(np.tanh(self.qd / p.joint_v_eps))
        stop = i_eff * np.abs(self.qd) / h
        tau_fric = -np.sign(self.qd) * np.minimum(cap, stop)
        tau = applied + tau_fric - self.act_damping * self.qd - bias
        self.qd = self.qd + h * np.einsum("nij,nj->ni", Minv, tau)

        # gripper servo on the opening DOF (position setpoint, force limited);
        # the damping term is implicit so randomized stiff servos stay stable
        setpoint = np.where(self.grip_cmd == 1, 0.0, arm.gripper_max_opening)
        servo = np.clip(
            (self.servo_kp * (setpoint - self.grip) - self.servo_kd * self.grip_vel)
            / (1.0 + h * self.servo_kd / self.track_mass),
            -self.servo_flim,
            self.servo_flim,
        )
        self.grip_vel = self.grip_vel + h * servo / self.track_mass

        # gravity on dynamic bodies
        self.body_twist[:, :, 1] -= h * p.gravity * (~self.is_static)[None, :]

        self._solve_contacts(h, pts, ee, Minv, (qd_pre, grip_vel_pre, twist_pre))

        # actuator speed saturation: joint velocities cannot exceed the motor
        # limit regardless of commanded torque
        self.qd = np.clip(self.qd, -QD_LIMIT, QD_LIMIT)

        # position update with the velocity average: exact for constant
        # acceleration, so free fall matches the ballistic closed form
        self.q = self.q + (0.5 * h) * (qd_pre + self.qd)
        new_grip = self.grip + (0.5 * h) * (grip_vel_pre + self.grip_vel)
        hit_lo = new_grip < 0.0
        hit_hi = new_grip > arm.gripper_max_opening
        self.grip = np.clip(new_grip, 0.0, arm.gripper_max_opening)
        self.grip_vel = np.where(hit_lo, np.maximum(self.grip_vel, 0.0), self.grip_vel)
        self.grip_vel = np.where(hit_hi, np.minimum(self.grip_vel, 0.0), self.grip_vel)
        avg = 0.5 * (twist_pre + self.body_twist)
        self.body_pose[:, :, :2] += h * avg[:, :, :2]
        self.body_pose[:, :, 2] = wrap_angle(self.body_pose[:, :, 2] + h * avg[:, :, 2])

    # -------------------------------------------------------------- contacts

    def _pad_pose(self, which, ee):
        padl, padr = pad_poses_from_ee(ee, self.grip, self.arm)
        return padl if which == PAD_L else padr

    def _world_verts(self, idx, poses_sub):
        local = self.local_verts[idx] if idx >= 0 else self._pad_verts
        c = np.cos(poses_sub[:, 2])[:, None]
        s = np.sin(poses_sub[:, 2])[:, None]
        x, y = local[None, :, 0], local[None, :, 1]
        return np.stack(
            [poses_sub[:, 0:1] + x * c - y * s, poses_sub[:, 1:2] + x * s + y * c], axis=2
        )

    def _solve_contacts(self, h, pts, ee, Minv, pre):
        pad_r = self._pad_radius
        padl, padr = pad_poses_from_ee(ee, self.grip, self.arm)
        ey = np.stack([-np.sin(ee[:, 2]), np.cos(ee[:, 2])], axis=1)  # gripper y axis

        blocks = []
        for a_idx, b_idx in self._pairs:
            pose_a = self._pad_or_body_pose(a_idx, padl, padr)
            ra = pad_r if a_idx < 0 else self.radii[a_idx]
            if b_idx == self.ground_idx:
                found = self._ground_contact(a_idx, pose_a, ra)
            else:
                pose_b = self._pad_or_body_pose(b_idx, padl, padr)
                rb = pad_r if b_idx < 0 else self.radii[b_idx]
                d = pose_b[:, :2] - pose_a[:, :2]
                near = np.sum(d * d, axis=1) <= (ra + rb) ** 2
                if not near.any():
                    continue
                sub = np.nonzero(near)[0]
                va = self._world_verts(a_idx, pose_a[sub])
                vb = self._world_verts(b_idx, pose_b[sub])
                out = sat_contact_batch(va, va.shape[1], vb, vb.shape[1])
                hit = out["overlap"]
                if not hit.any():
                    continue
                found = (
                    sub[hit],
                    out["normal"][hit],
                    out["points"][hit],
                    out["point_depth"][hit],
                    out["count"][hit],
                )
            if found is None:
                continue
            env, normal, points, depths, count = found
            blocks.extend(
                self._make_blocks(
                    env, a_idx, b_idx, normal, points, depths, count, pts, ey, Minv, pre
                )
            )
            if (a_idx < 0 and b_idx == self.target_idx):
                col = 0 if a_idx == PAD_L else 1
                self.pad_touch[env, col] = True

        # projected Gauss-Seidel over accumulated impulses: resolves two-sided
        # squeezes (grasps, slot walls) a single sequential pass cannot
        for _ in range(self.params.contact_iterations):
            for blk in blocks:
                self._iterate_block(blk, h)

    def _ground_contact(self, a_idx, pose_a, ra):
        """Vertex-vs-halfplane contact with the table top; normal (0, -1)."""
        near = pose_a[:, 1] - ra <= self.ground_top
        if not near.any():
            return None
        sub = np.nonzero(near)[0]
        verts = self._world_verts(a_idx, pose_a[sub])  # (m, k, 2)
        depth = self.ground_top - verts[:, :, 1]
        hit = (depth > 0.0).any(axis=1)
        if not hit.any():
            return None
        env = sub[hit]
        depth = depth[hit]
        verts = verts[hit]
        # two deepest vertices; argsort is stable so ties stay deterministic
        order = np.argsort(-depth, axis=1, kind="stable")[:, :2]
        rows = np.arange(len(env))[:, None]
        d2 = depth[rows, order]
        points = verts[rows, order]
        count = 1 + (d2[:, 1] > 0.0).astype(np.int64)
        d2 = np.where(d2 > 0, d2, 0.0)
        normal = np.tile(np.array([0.0, -1.0]), (len(env), 1))
        return env, normal, points, d2, count

    def _pad_or_body_pose(self, idx, padl, padr):
        if idx == PAD_L:
            return padl
        if idx == PAD_R:
            return padr
        return self.body_pose[:, idx]

    def _build_side(self, idx, e, point, pts, ey, Minv):
        """Precomputed quantities for one participant of a contact block.

        kind 0 = static, 1 = dynamic body, 2 = pad. The K matrix maps an
        impulse at the point to the point's velocity change (2x2 per env).
        """
        if idx >= 0 and self.is_static[idx]:
            return (0,)
        if idx >= 0:
            r = point - self.body_pose[e, idx, :2]
            perp = np.stack([-r[:, 1], r[:, 0]], axis=1)
            inv_m = 1.0 / self.mass[e, idx]
            inv_i = 1.0 / self.inertia[e, idx]
            k = np.empty((len(e), 2, 2))
            k[:, 0, 0] = inv_m + r[:, 1] * r[:, 1] * inv_i
            k[:, 0, 1] = -r[:, 0] * r[:, 1] * inv_i
            k[:, 1, 0] = k[:, 0, 1]
            k[:, 1, 1] = inv_m + r[:, 0] * r[:, 0] * inv_i
            return (1, idx, e, r, inv_m, inv_i, k, perp)
        s_p = -0.5 if idx == PAD_L else 0.5
        jp = np.empty((len(e), 2, 3))
        for i in range(3):
            r = point - pts[e, i]
            jp[:, 0, i] = -r[:, 1]
            jp[:, 1, i] = r[:, 0]
        mjt = np.einsum("kjl,kdl->kjd", Minv[e], jp)  # (m, 3, 2): Minv @ Jp^T
        k = np.einsum("kdj,kjc->kdc", jp, mjt)  # Jp Minv Jp^T
        ts = s_p * 0.5 * ey[e]  # point velocity per unit opening rate
        inv_track = 1.0 / self.track_mass[e]
        k = k + ts[:, :, None] * ts[:, None, :] * inv_track[:, None, None]
        return (2, idx, e, jp, mjt, ts, inv_track, k)

    def _side_velocity(self, side):
        kind = side[0]
        if kind == 0:
            return 0.0
        if kind == 1:
            _, idx, e, _, _, _, _, perp = side
            tw = self.body_twist[e, idx]
            return tw[:, :2] + tw[:, 2:3] * perp
        _, idx, e, jp, _, ts, _, _ = side
        return np.einsum("kdj,kj->kd", jp, self.qd[e]) + self.grip_vel[e, None] * ts

    def _side_velocity_pre(self, side, pre):
        qd_pre, grip_vel_pre, twist_pre = pre
        kind = side[0]
        if kind == 0:
            return 0.0
        if kind == 1:
            _, idx, e, _, _, _, _, perp = side
            tw = twist_pre[e, idx]
            return tw[:, :2] + tw[:, 2:3] * perp
        _, idx, e, jp, _, ts, _, _ = side
        return np.einsum("kdj,kj->kd", jp, qd_pre[e]) + grip_vel_pre[e, None] * ts

    def _side_apply(self, side, imp):
        kind = side[0]
        if kind == 0:
            return
        if kind == 1:
            _, idx, e, r, inv_m, inv_i, _, _ = side
            self.body_twist[e, idx, 0] += imp[:, 0] * inv_m
            self.body_twist[e, idx, 1] += imp[:, 1] * inv_m
            self.body_twist[e, idx, 2] += (r[:, 0] * imp[:, 1] - r[:, 1] * imp[:, 0]) * inv_i
            return
        _, idx, e, jp, mjt, ts, inv_track, _ = side
        self.qd[e] += np.einsum("kjd,kd->kj", mjt, imp)
        self.grip_vel[e] += np.sum(imp * ts, axis=1) * inv_track

    @staticmethod
    def _side_k(side):
        if side[0] == 0:
            return None
        if side[0] == 1:
            return side[6]
        return side[7]

    def _pair_friction(self, a_idx, b_idx, env):
        fs_a = self.pad_fric_s[env] if a_idx < 0 else self.fric_s[env, a_idx]
        fd_a = self.pad_fric_d[env] if a_idx < 0 else self.fric_d[env, a_idx]
        fs_b = self.pad_fric_s[env] if b_idx < 0 else self.fric_s[env, b_idx]
        fd_b = self.pad_fric_d[env] if b_idx < 0 else self.fric_d[env, b_idx]
        return np.sqrt(fs_a * fs_b), np.sqrt(fd_a * fd_b)

    def _make_blocks(self, env, a_idx, b_idx, normal, points, depths, count, pts, ey, Minv, pre):
        """One solver block per live manifold point, with caches for iteration."""
        blocks = []
        mu_s, mu_d = self._pair_friction(a_idx, b_idx, env)
        tang = np.stack([-normal[:, 1], normal[:, 0]], axis=1)
        for pt_i in range(2):
            live = count > pt_i
            if not live.any():
                continue
            e = env[live]
            n = normal[live]
            t = tang[live]
            pnt = points[live, pt_i]
            depth = depths[live, pt_i]
            side_a = self._build_side(a_idx, e, pnt, pts, ey, Minv)
            side_b = self._build_side(b_idx, e, pnt, pts, ey, Minv)
            k_a, k_b = self._side_k(side_a), self._side_k(side_b)
            k_sum = (0.0 if k_a is None else k_a) + (0.0 if k_b is None else k_b)
            kn_vec = np.einsum("kde,ke->kd", k_sum, n)
            w_n = np.maximum(np.sum(n * kn_vec, axis=1), 1e-12)
            w_t = np.maximum(np.einsum("kd,kde,ke->k", t, k_sum, t), 1e-12)
            w_nt = np.sum(t * kn_vec, axis=1)  # tangential kick per unit normal impulse
            va = self._side_velocity_pre(side_a, pre)
            vb = self._side_velocity_pre(side_b, pre)
            vn_pre = np.sum((vb - va) * n, axis=1)
            blocks.append(
                {
                    "a": side_a,
                    "b": side_b,
                    "n": n,
                    "t": t,
                    "depth": depth,
                    "w_n": w_n,
                    "w_t": w_t,
                    "w_nt": w_nt,
                    "vn_pre": vn_pre,
                    "mu_s": mu_s[live],
                    "mu_d": mu_d[live],
                    "jn": np.zeros(len(e)),
                    "jt": np.zeros(len(e)),
                }
            )
        return blocks

    def _iterate_block(self, blk, h):
        p = self.params
        kn, kd = p.contact_kn, p.contact_kd
        half = 0.5 * h * h * kn
        gain = half + h * kd
        n, t = blk["n"], blk["t"]
        va = self._side_velocity(blk["a"])
        vb = self._side_velocity(blk["b"])
        vrel = vb - va
        vn = np.sum(vrel * n, axis=1)
        vt = np.sum(vrel * t, axis=1)

        # accumulated implicit penalty impulse: solve against the velocity the
        # pair would have without this block's own normal impulse
        vn_free = vn - blk["w_n"] * blk["jn"]
        target = (h * kn * blk["depth"] - half * blk["vn_pre"] - gain * vn_free) / (
            1.0 + gain * blk["w_n"]
        )
        target = np.maximum(target, 0.0)
        delta = target - blk["jn"]
        blk["jn"] = target
        imp = delta[:, None] * n
        self._side_apply(blk["b"], imp)
        self._side_apply(blk["a"], -imp)

        # friction: exact stiction impulse capped by regularized Coulomb
        vt = vt + delta * blk["w_nt"]
        vt_free = vt - blk["w_t"] * blk["jt"]
        mu = np.minimum(
            blk["mu_s"] * np.abs(np.tanh(vt_free / p.friction_v_eps)), blk["mu_d"]
        )
        cap = mu * blk["jn"]
        jt_target = np.clip(-vt_free / blk["w_t"], -cap, cap)
        delta_t = jt_target - blk["jt"]
        blk["jt"] = jt_target
        impt = delta_t[:, None] * t
        self._side_apply(blk["b"], impt)
        self._side_apply(blk["a"], -impt)

    # ------------------------------------------------------------ inspection

    def check_abnormal(self, workspace: Workspace = DEFAULT_WORKSPACE):
        """Joint limits, NaN, fallen target, or EE outside the inflated box."""
        lo = np.asarray(self.arm.joint_limits_low)
        hi = np.asarray(self.arm.joint_limits_high)
        bad_q = np.any((self.q < lo) | (self.q > hi), axis=1)
        ee = self.ee_pose()
        bad_ee = ~workspace.contains(ee[:, 0], ee[:, 1], inflate=0.1)
        if self.target_idx is None:
            fallen = np.zeros(self.n, dtype=bool)
        else:
            fallen = self.body_pose[:, self.target_idx, 1] < -0.05
        return bad_q | bad_ee | fallen | self.abnormal

    def set_env_state(self, idx, q, qd, grip, grip_cmd, body_pose, body_twist, goal):
        """Reset selected envs in place; clears buffers, time, and flags."""
        self.q[idx] = q
        self.qd[idx] = qd
        self.grip[idx] = grip
        self.grip_vel[idx] = 0.0
        self.grip_cmd[idx] = grip_cmd
        self.body_pose[idx] = body_pose
        self.body_twist[idx] = body_twist
        self.goal[idx] = goal
        self.tau_buf[idx] = 0.0
        self.time[idx] = 0.0
        self.abnormal[idx] = False

    def max_penetration(self):
        """Deepest interpenetration (N,) across all pairs, pads included."""
        ang, pts = self._chain()
        ee = np.concatenate([pts[:, 3], ang[:, 2:3]], axis=1)
        padl, padr = pad_poses_from_ee(ee, self.grip, self.arm)
        out = np.zeros(self.n)
        for a_idx, b_idx in self._pairs:
            pose_a = self._pad_or_body_pose(a_idx, padl, padr)
            pose_b = self._pad_or_body_pose(b_idx, padl, padr)
            ra = self._pad_radius if a_idx < 0 else self.radii[a_idx]
            rb = self._pad_radius if b_idx < 0 else self.radii[b_idx]
            d = pose_b[:, :2] - pose_a[:, :2]
            near = np.sum(d * d, axis=1) <= (ra + rb) ** 2
            if not near.any():
                continue
            sub = np.nonzero(near)[0]
            res = sat_contact_batch(
                self._world_verts(a_idx, pose_a[sub]),
                4 if a_idx < 0 else self.local_verts[a_idx].shape[0],
                self._world_verts(b_idx, pose_b[sub]),
                4 if b_idx < 0 else self.local_verts[b_idx].shape[0],
            )
            hit = res["overlap"]
            if hit.any():
                depth = np.maximum(res["depth"][hit], 0.0)
                np.maximum.at(out, sub[hit], depth)
        return out

    def elastic_energy(self):
        """Penalty-spring storage (N,): sum of 0.5*kn*depth^2 over live contacts."""
        ang, pts = self._chain()
        ee = np.concatenate([pts[:, 3], ang[:, 2:3]], axis=1)
        padl, padr = pad_poses_from_ee(ee, self.grip, self.arm)
        out = np.zeros(self.n)
        kn = self.params.contact_kn
        for a_idx, b_idx in self._pairs:
            pose_a = self._pad_or_body_pose(a_idx, padl, padr)
            pose_b = self._pad_or_body_pose(b_idx, padl, padr)
            ra = self._pad_radius if a_idx < 0 else self.radii[a_idx]
            rb = self._pad_radius if b_idx < 0 else self.radii[b_idx]
            d = pose_b[:, :2] - pose_a[:, :2]
            near = np.sum(d * d, axis=1) <= (ra + rb) ** 2
            if not near.any():
                continue
            sub = np.nonzero(near)[0]
            res = sat_contact_batch(
                self._world_verts(a_idx, pose_a[sub]),
                4 if a_idx < 0 else self.local_verts[a_idx].shape[0],
                self._world_verts(b_idx, pose_b[sub]),
                4 if b_idx < 0 else self.local_verts[b_idx].shape[0],
            )
            hit = res["overlap"]
            if hit.any():
                depths = res["point_depth"][hit]
                cnt = res["count"][hit]
                d2 = depths[:, 0] ** 2 + np.where(cnt > 1, depths[:, 1] ** 2, 0.0)
                out[sub[hit]] += 0.5 * kn * d2
        return out

    def total_energy(self):
        """Mechanical energy (N,): arm + gripper track + dynamic bodies."""
        from .arm import kinetic_energy_batch, potential_energy_batch

        e = kinetic_energy_batch(self.q, self.qd, self.arm, self.act_armature)
        e = e + potential_energy_batch(self.q, self.arm, self.params.gravity)
        e = e + 0.5 * self.track_mass * self.grip_vel**2
        dyn = ~self.is_static
        ke = 0.5 * self.mass * np.sum(self.body_twist[:, :, :2] ** 2, axis=2)
        ke += 0.5 * self.inertia * self.body_twist[:, :, 2] ** 2
        pe = self.mass * self.params.gravity * self.body_pose[:, :, 1]
        return e + np.sum((ke + pe) * dyn[None, :], axis=1)


# ------------------------------------------------------------------ public ops


def step(
    world: WorldState,
    tau,
    actuators: ActuatorParams = None,
    params: SimParams = None,
    arm: ArmSpec = None,
) -> WorldState:
    """One semi-implicit Euler step of a single world; pure (returns a copy)."""
    sim = BatchSim.from_worlds(
        [world], actuators if actuators is not None else ActuatorParams(), params, arm
    )
    sim.step(np.asarray(tau, dtype=np.float64)[None])
    return sim.to_worlds()[0]


def step_batch(worlds, taus, actuators=None, params: SimParams = None, arm: ArmSpec = None):
    """Elementwise step of N worlds; equals N sequential `step` calls bitwise."""
    if actuators is None:
        actuators = ActuatorParams()
    sim = BatchSim.from_worlds(list(worlds), actuators, params, arm)
    sim.step(np.asarray(taus, dtype=np.float64))
    return sim.to_worlds()


def check_abnormal(world: WorldState, workspace: Workspace = DEFAULT_WORKSPACE, arm=None) -> bool:
    sim = BatchSim.from_worlds([world], ActuatorParams(), None, arm)
    return bool(sim.check_abnormal(workspace)[0])
