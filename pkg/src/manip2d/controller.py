"""Operational-space torque control and the relative-Cartesian action interface.

The 10 Hz policy emits bounded deltas that move a persistent end-effector
target; the controller converts pose error to torques through the Jacobian
transpose at every sim step (120 Hz). Gravity compensation is added because a
torque-level law without it cannot hold pose on a fully simulated arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import ArmSpec, DEFAULT_ARM, gravity_torque_batch, jacobian_batch
from .geom2d import Pose2, wrap_angle
from .world import DEFAULT_WORKSPACE, GRIPPER_CLOSE, GRIPPER_OPEN, Workspace

TRAIN_SCALE = (0.02, 0.02, 0.2)
DEPLOY_SCALE = (0.01, 0.002, 0.2)  # smallest on vertical, largest on rotation
TARGET_INFLATE = 0.05


def critical_damping(kp):
    """kd = 2 sqrt(kp), elementwise."""
    kp = np.asarray(kp, dtype=np.float64)
    if np.any(kp < 0):
        raise ValueError("kp must be >= 0")
    return 2.0 * np.sqrt(kp)


@dataclass(frozen=True)
class GainSet:
    """Diagonal task-space stiffness and damping; damping defaults critical.

    Vertical stiffness is high enough that a held object's weight sags the
    arm by under 2 mm when the target equals the current pose.
    """

    kp: np.ndarray = field(default_factory=lambda: np.array([200.0, 500.0, 20.0]))
    kd: np.ndarray = None

    def __post_init__(self):
        kp = np.asarray(self.kp, dtype=np.float64).reshape(3)
        object.__setattr__(self, "kp", kp)
        if self.kd is None:
            object.__setattr__(self, "kd", critical_damping(kp))
        else:
            object.__setattr__(self, "kd", np.asarray(self.kd, dtype=np.float64).reshape(3))

    def scaled(self, factor) -> "GainSet":
        """Gain randomization/boost: scale kp and re-synthesize critical kd."""
        return GainSet(kp=self.kp * factor)


@dataclass(frozen=True)
class ActionScale:
    per_dim: np.ndarray = field(default_factory=lambda: np.array(TRAIN_SCALE))

    def __post_init__(self):
        v = np.asarray(self.per_dim, dtype=np.float64).reshape(3)
        if np.any(v <= 0):
            raise ValueError("action scales must be strictly positive")
        object.__setattr__(self, "per_dim", v)


@dataclass(frozen=True)
class Limits:
    err_clip: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.5]))
    tau_max: np.ndarray = field(default_factory=lambda: np.array([50.0, 50.0, 20.0]))
    apply_tau_clip: bool = False  # torque clipping only in deploy-mode evaluation

    def __post_init__(self):
        object.__setattr__(self, "err_clip", np.asarray(self.err_clip, dtype=np.float64).reshape(3))
        object.__setattr__(self, "tau_max", np.asarray(self.tau_max, dtype=np.float64).reshape(3))
        if np.any(self.err_clip <= 0) or np.any(self.tau_max <= 0):
            raise ValueError("limits must be positive")


@dataclass
class CommandState:
    target_ee: Pose2
    gripper_command: str = GRIPPER_OPEN


def clamp_target(x, y, workspace: Workspace = DEFAULT_WORKSPACE):
    lo_x = workspace.x_range[0] - TARGET_INFLATE
    hi_x = workspace.x_range[1] + TARGET_INFLATE
    lo_y = workspace.y_range[0] - TARGET_INFLATE
    hi_y = workspace.y_range[1] + TARGET_INFLATE
    return np.clip(x, lo_x, hi_x), np.clip(y, lo_y, hi_y)


def apply_action(
    current_target: Pose2,
    action,
    scale: ActionScale,
    workspace: Workspace = DEFAULT_WORKSPACE,
) -> CommandState:
    """Integrate a bounded relative action into the command state.

    action is a 4-vector in [-1, 1] (clamped, never rejected): scaled (dx,
    dy, dtheta) plus the binary gripper channel (close iff > 0).
    """
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(4), -1.0, 1.0)
    s = scale.per_dim
    x, y = clamp_target(
        current_target.x + a[0] * s[0], current_target.y + a[1] * s[1], workspace
    )
    theta = wrap_angle(current_target.theta + a[2] * s[2])
    grip = GRIPPER_CLOSE if a[3] > 0 else GRIPPER_OPEN
    return CommandState(target_ee=Pose2(float(x), float(y), float(theta)), gripper_command=grip)


def apply_action_batch(targets: np.ndarray, actions: np.ndarray, scale: ActionScale,
                       workspace: Workspace = DEFAULT_WORKSPACE):
    """Vectorized apply_action: targets (N, 3), actions (N, 4) -> (targets', close)."""
    a = np.clip(actions, -1.0, 1.0)
    s = scale.per_dim
    x, y = clamp_target(targets[:, 0] + a[:, 0] * s[0], targets[:, 1] + a[:, 1] * s[1], workspace)
    theta = wrap_angle(targets[:, 2] + a[:, 2] * s[2])
    return np.stack([x, y, theta], axis=1), a[:, 3] > 0


def pose_error(ee: np.ndarray, target: np.ndarray, err_clip: np.ndarray) -> np.ndarray:
    """Clipped task-space error (N, 3) from EE pose rows to target rows."""
    e = np.empty_like(ee)
    e[:, 0] = target[:, 0] - ee[:, 0]
    e[:, 1] = target[:, 1] - ee[:, 1]
    e[:, 2] = wrap_angle(target[:, 2] - ee[:, 2])
    return np.clip(e, -err_clip, err_clip)


def osc_torque_batch(
    q: np.ndarray,
    qd: np.ndarray,
    targets: np.ndarray,
    gains: GainSet,
    limits: Limits,
    arm: ArmSpec = DEFAULT_ARM,
    kp_scale=None,
    gravity: float = 9.81,
):
    """Jacobian-transpose OSC with gravity compensation, batched over envs.

    F = kp*e - kd*xdot, tau = J^T F + g(q); torques clipped only when
    limits.apply_tau_clip (deploy mode).
    """
    from .arm import fk_batch

    J = jacobian_batch(q, arm)
    ee = fk_batch(q, arm)
    e = pose_error(ee, targets, limits.err_clip)
    xd = np.einsum("nij,nj->ni", J, qd)
    kp, kd = gains.kp, gains.kd
    if kp_scale is not None:
        kp = kp * kp_scale[:, None]
        kd = 2.0 * np.sqrt(kp)
    F = kp * e - kd * xd
    tau = np.einsum("nji,nj->ni", J, F) + gravity_torque_batch(q, arm, gravity)
    if limits.apply_tau_clip:
        tau = np.clip(tau, -limits.tau_max, limits.tau_max)
    return tau


def osc_torque(q, qd, cmd: CommandState, gains: GainSet, limits: Limits,
               arm: ArmSpec = DEFAULT_ARM, gravity: float = 9.81) -> np.ndarray:
    """Single-world OSC torque for a CommandState."""
    q = np.asarray(q, dtype=np.float64).reshape(1, 3)
    qd = np.asarray(qd, dtype=np.float64).reshape(1, 3)
    target = cmd.target_ee.as_array()[None]
    return osc_torque_batch(q, qd, target, gains, limits, arm, gravity=gravity)[0]


@dataclass
class ScaleCurriculum:
    """Success-gated interpolation from a start to an end action scale.

    Progress moves at most `rate` of the full range per update, only while
    the smoothed success stays at or above `threshold`; it never regresses.
    """

    start: ActionScale
    end: ActionScale
    threshold: float = 0.7
    rate: float = 0.02
    progress: float = 0.0

    def update(self, success_ema: float) -> ActionScale:
        if not 0.0 <= success_ema <= 1.0:
            raise ValueError("success_ema must lie in [0, 1]")
        if success_ema >= self.threshold:
            self.progress = min(1.0, self.progress + self.rate)
        return self.current()

    def current(self) -> ActionScale:
        p = self.progress
        return ActionScale((1.0 - p) * self.start.per_dim + p * self.end.per_dim)


def curriculum_scale(state: ScaleCurriculum, success_ema: float, step: int = 0) -> ActionScale:
    """Advance the action-scale curriculum one update; step is informational."""
    return state.update(success_ema)
