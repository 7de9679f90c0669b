"""Vectorized training environment: batched sim + OSC + reward + resets.

Each policy step integrates the bounded relative action into a persistent
end-effector target, runs `decimation` torque updates through the simulator,
evaluates the task-agnostic reward, and resets finished environments from
the loaded reset datasets (region tags recorded per episode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import ArmSpec, DEFAULT_ARM
from .controller import (
    ActionScale,
    GainSet,
    Limits,
    TRAIN_SCALE,
    apply_action_batch,
    osc_torque_batch,
)
from .engine import BatchSim
from .geom2d import wrap_angle
from .policy import build_frame, ObsStack
from .resets import REGIONS, ResetDataset, sample_reset
from .reward import RewardWeights, SuccessThresholds, total_reward
from .sysid import PlantParams, RandomizationSpec, sample_randomization
from .world import DEFAULT_WORKSPACE, SceneSpec, SimParams, Workspace

PRIV_SCALE = np.array(
    [0.1, 1e-3, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0,
     1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 1.0, 1.0, 1.0,
     1.0, 1.0, 1.0, 0.3, 0.3, np.pi, 1.0, 1.0]
)


@dataclass
class EnvConfig:
    episode_len: int = 300
    decimation: int = 12
    action_scale: tuple = TRAIN_SCALE
    gains_kp: tuple = (200.0, 200.0, 20.0)
    deploy_tau_clip: bool = False
    randomize: bool = True
    nominal_plant: PlantParams = field(default_factory=PlantParams.scalar)
    gain_boost: float = 1.0
    regions: tuple = REGIONS  # restrict reset sampling, e.g. reaching only


class VecEnv:
    """N parallel worlds of one scene, reset from validated datasets."""

    def __init__(
        self,
        scene: SceneSpec,
        datasets,
        n_envs: int,
        seed: int = 0,
        cfg: EnvConfig = None,
        sim_params: SimParams = None,
        arm: ArmSpec = None,
        weights: RewardWeights = None,
        thresholds: SuccessThresholds = None,
        rand_spec: RandomizationSpec = None,
        workspace: Workspace = DEFAULT_WORKSPACE,
    ):
        self.cfg = cfg or EnvConfig()
        self.scene = scene
        self.n = n_envs
        self.arm = arm or DEFAULT_ARM
        self.sim_params = sim_params or SimParams()
        self.weights = weights or RewardWeights()
        self.thresholds = thresholds or SuccessThresholds()
        self.rand_spec = rand_spec or RandomizationSpec()
        self.workspace = workspace
        self.sim = BatchSim.from_scene(scene, n_envs, self.sim_params, self.arm)
        self.tgt = self.sim.target_idx

        if isinstance(datasets, ResetDataset):
            records = datasets.records
        else:
            records = [r for d in datasets for r in d.records]
        self.records_by_region = {
            r: [rec for rec in records if rec.region == r] for r in REGIONS
        }
        self.pool = [rec for rec in records if rec.region in self.cfg.regions]
        if not self.pool:
            raise ValueError("no reset records for the configured regions")

        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE4F]))
        self.scale = ActionScale(self.cfg.action_scale)
        self.gains = GainSet(kp=np.asarray(self.cfg.gains_kp))
        self.limits = Limits(apply_tau_clip=self.cfg.deploy_tau_clip)

        self.obs_stack = ObsStack(n_envs)
        self.prev_action = np.zeros((n_envs, 4))
        self.targets = np.zeros((n_envs, 3))
        self.hold = np.zeros(n_envs, dtype=np.int64)
        self.steps = np.zeros(n_envs, dtype=np.int64)
        self.ep_success = np.zeros(n_envs, dtype=bool)
        self.region_tag = np.zeros(n_envs, dtype=np.int64)
        self.gain_scale = np.ones(n_envs)
        self.episode_events = []  # (region_idx, success) per finished episode

        self.reset_envs(np.arange(n_envs))

    # ------------------------------------------------------------- resets

    def _apply_randomization(self, idx):
        draws = sample_randomization(self.rand_spec, self.rng, len(idx), self.cfg.nominal_plant)
        sim, tgt = self.sim, self.tgt
        sim.fric_s[idx, tgt] = draws["object_friction_static"]
        sim.fric_d[idx, tgt] = draws["object_friction_dynamic"]
        sim.pad_fric_s[idx] = draws["robot_friction_static"]
        sim.pad_fric_d[idx] = draws["robot_friction_dynamic"]
        for bi in range(self.sim.n_bodies):
            if bi == tgt or not self.sim.is_static[bi]:
                continue
            if bi == self.sim.ground_idx:
                sim.fric_s[idx, bi] = draws["table_friction_static"]
                sim.fric_d[idx, bi] = draws["table_friction_dynamic"]
        sim.mass[idx, tgt] = draws["object_mass"]
        sim.inertia[idx, tgt] = draws["object_mass"] * unit_inertia(self.scene, tgt)
        sim.act_friction[idx] = draws["joint_friction"]
        sim.act_armature[idx] = draws["armature"]
        sim.act_damping[idx] = 1.0 * draws["damping_scale"]
        sim.act_delay[idx] = draws["motor_delay"][:, None]
        sim.servo_kp[idx] = self.arm.servo_kp * draws["gripper_stiffness_scale"]
        sim.servo_kd[idx] = self.arm.servo_kd * draws["gripper_damping_scale"]
        self.gain_scale[idx] = draws["gain_scale"] * self.cfg.gain_boost

    def reset_envs(self, idx, gsde=None):
        idx = np.atleast_1d(idx)
        for i in idx:
            rec = self.pool[self.rng.integers(0, len(self.pool))]
            self.sim.set_env_state(
                i,
                rec.q,
                rec.qd,
                rec.gripper_opening,
                1 if rec.gripper_command == "close" else 0,
                rec.body_poses,
                rec.body_twists,
                rec.goal,
            )
            self.region_tag[i] = REGIONS.index(rec.region)
        if self.cfg.randomize:
            self._apply_randomization(idx)
        else:
            self.gain_scale[idx] = self.cfg.gain_boost
        self.prev_action[idx] = 0.0
        self.hold[idx] = 0
        self.steps[idx] = 0
        self.ep_success[idx] = False
        ee = self.sim.ee_pose()
        self.targets[idx] = ee[idx]
        frames = self._frames()
        self.obs_stack.reset_env(idx, frames[idx])
        if gsde is not None:
            gsde.resample(idx)

    # ---------------------------------------------------------------- obs

    def _frames(self):
        sim = self.sim
        ee = sim.ee_pose()
        return build_frame(
            sim.q,
            sim.qd,
            ee,
            sim.grip,
            sim.body_pose[:, self.tgt],
            sim.body_twist[:, self.tgt],
            sim.goal,
            self.prev_action,
        )

    def obs(self):
        return self.obs_stack.flat()

    def _goal_frame_errors(self):
        sim = self.sim
        obj = sim.body_pose[:, self.tgt]
        goal = sim.goal
        dx = obj[:, 0] - goal[:, 0]
        dy = obj[:, 1] - goal[:, 1]
        c, s = np.cos(goal[:, 2]), np.sin(goal[:, 2])
        x_err = np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)
        th_err = wrap_angle(obj[:, 2] - goal[:, 2])
        return x_err, th_err

    def privileged(self):
        """Simulator ground truth for the critic (N, 25), roughly normalized."""
        sim, tgt = self.sim, self.tgt
        x_err, th_err = self._goal_frame_errors()
        cols = [
            sim.mass[:, tgt],
            sim.inertia[:, tgt],
            sim.fric_s[:, tgt],
            sim.fric_d[:, tgt],
            sim.fric_s[:, self.sim.ground_idx],
            sim.fric_d[:, self.sim.ground_idx],
            sim.pad_fric_s,
            sim.pad_fric_d,
            sim.act_friction[:, 0],
            sim.act_friction[:, 1],
            sim.act_friction[:, 2],
            sim.act_armature[:, 0],
            sim.act_armature[:, 1],
            sim.act_armature[:, 2],
            sim.act_delay[:, 0].astype(np.float64),
            sim.act_delay[:, 1].astype(np.float64),
            sim.act_delay[:, 2].astype(np.float64),
            self.gain_scale,
            sim.servo_kp / self.arm.servo_kp,
            sim.servo_kd / self.arm.servo_kd,
            x_err[:, 0],
            x_err[:, 1],
            th_err,
            sim.pad_touch[:, 0].astype(np.float64),
            sim.pad_touch[:, 1].astype(np.float64),
        ]
        return np.stack(cols, axis=1) / PRIV_SCALE

    # --------------------------------------------------------------- step

    def step(self, actions, gsde=None):
        """One 10 Hz policy step; returns (reward, done, truncated, info)."""
        sim = self.sim
        actions = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
        self.targets, close = apply_action_batch(self.targets, actions, self.scale, self.workspace)
        sim.grip_cmd = close.astype(np.int64)

        for _ in range(self.cfg.decimation):
            tau = osc_torque_batch(
                sim.q,
                sim.qd,
                self.targets,
                self.gains,
                self.limits,
                self.arm,
                kp_scale=self.gain_scale,
                gravity=self.sim_params.gravity,
            )
            sim.step(tau)

        x_err, th_err = self._goal_frame_errors()
        ee = sim.ee_pose()
        abnormal = sim.check_abnormal(self.workspace)
        comp, self.hold, ok = total_reward(
            x_err,
            th_err,
            ee[:, :2],
            sim.body_pose[:, self.tgt, :2],
            actions,
            self.prev_action,
            sim.qd,
            abnormal,
            self.hold,
            self.weights,
            self.thresholds,
        )
        self.prev_action = actions.copy()
        self.ep_success |= ok
        self.steps += 1
        timeout = self.steps >= self.cfg.episode_len
        done = abnormal | timeout
        truncated = timeout & ~abnormal

        info = {
            "reward_components": comp,
            "success_now": ok,
            "region": self.region_tag.copy(),
            "abnormal": abnormal,
        }
        # post-step frame for the next observation (pre-reset state is what
        # value bootstrapping needs; the caller reads it from info)
        frames = self._frames()
        self.obs_stack.push(frames)
        info["terminal_obs"] = self.obs_stack.flat().copy() if done.any() else None
        info["terminal_priv"] = self.privileged().copy() if done.any() else None

        if done.any():
            idx = np.nonzero(done)[0]
            for i in idx:
                self.episode_events.append(
                    (int(self.region_tag[i]), bool(self.ep_success[i]))
                )
            self.reset_envs(idx, gsde=gsde)
        return comp["total"], done, truncated, info

    def drain_events(self):
        ev = self.episode_events
        self.episode_events = []
        return ev


_inertia_cache = {}


def unit_inertia(scene: SceneSpec, idx: int) -> float:
    """Second moment of the body's shape at unit mass (cached per scene)."""
    key = (scene.scene_hash(), idx)
    if key not in _inertia_cache:
        from .world import polygon_inertia

        _inertia_cache[key] = polygon_inertia(scene.bodies[idx].shape, 1.0)
    return _inertia_cache[key]
