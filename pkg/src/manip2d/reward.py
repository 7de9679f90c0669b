"""The task-agnostic reward: one fixed set of weights shared by every task.

r = r_success + r_dist + r_reach + r_smooth + r_term. Pose errors are
computed in the goal frame; the success predicate requires both thresholds
to hold for a consecutive number of policy steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardWeights:
    lambda_act: float = 1e-4
    lambda_rate: float = 1e-3
    lambda_vel: float = 1e-2
    lambda_abnormal: float = 100.0
    lambda_reach: float = 0.1
    lambda_dist: float = 0.1
    lambda_success: float = 1.0
    sigma_reach: float = 0.1
    sigma_pos: float = 0.05
    sigma_rot: float = 0.5

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ValueError(f"reward weight {name} must be >= 0")


@dataclass(frozen=True)
class SuccessThresholds:
    pos_tol: float = 5e-3
    rot_tol: float = 0.1
    hold_steps: int = 5

    def __post_init__(self):
        if self.pos_tol <= 0 or self.rot_tol <= 0 or self.hold_steps <= 0:
            raise ValueError("success thresholds must be positive")


@dataclass
class RewardBreakdown:
    r_success: float
    r_dist: float
    r_reach: float
    r_smooth: float
    r_term: float

    @property
    def total(self) -> float:
        return self.r_success + self.r_dist + self.r_reach + self.r_smooth + self.r_term


def r_smooth(a, a_prev, qd, w: RewardWeights):
    """Penalty on action magnitude, action rate, and joint speed (<= 0)."""
    a = np.asarray(a, dtype=np.float64)
    a_prev = np.asarray(a_prev, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    return -(
        w.lambda_act * np.sum(a * a, axis=-1)
        + w.lambda_rate * np.sum((a - a_prev) ** 2, axis=-1)
        + w.lambda_vel * np.sum(qd * qd, axis=-1)
    )


def r_reach(p_ee, p_obj, w: RewardWeights):
    """Bounded shaping toward the target object, in [0, lambda_reach]."""
    p_ee = np.asarray(p_ee, dtype=np.float64)
    p_obj = np.asarray(p_obj, dtype=np.float64)
    dist = np.sqrt(np.sum((p_ee - p_obj) ** 2, axis=-1))
    return w.lambda_reach * (1.0 - np.tanh(dist / w.sigma_reach))


def r_dist(x_err, theta_err, w: RewardWeights):
    """Goal-frame pose shaping, in [0, lambda_dist]."""
    x_err = np.asarray(x_err, dtype=np.float64)
    pos = np.sqrt(np.sum(x_err * x_err, axis=-1))
    return (
        w.lambda_dist
        * 0.5
        * (np.exp(-pos / w.sigma_pos) + np.exp(-np.abs(theta_err) / w.sigma_rot))
    )


def within_tolerance(x_err, theta_err, th: SuccessThresholds):
    x_err = np.asarray(x_err, dtype=np.float64)
    pos = np.sqrt(np.sum(x_err * x_err, axis=-1))
    return (pos <= th.pos_tol) & (np.abs(np.asarray(theta_err)) <= th.rot_tol)


def success(x_err, theta_err, th: SuccessThresholds, history: int) -> bool:
    """True once the tolerance has held for hold_steps consecutive steps.

    history counts consecutive in-tolerance steps before this one; callers
    advance it with update_hold.
    """
    if not within_tolerance(x_err, theta_err, th):
        return False
    return history + 1 >= th.hold_steps


def update_hold(hold, x_err, theta_err, th: SuccessThresholds):
    """Advance consecutive-in-tolerance counters; returns (hold', success_now)."""
    inside = within_tolerance(x_err, theta_err, th)
    hold = np.where(inside, hold + 1, 0)
    return hold, hold >= th.hold_steps


def total_reward(
    x_err,
    theta_err,
    p_ee,
    p_obj,
    action,
    prev_action,
    qd,
    abnormal,
    hold,
    w: RewardWeights = RewardWeights(),
    th: SuccessThresholds = SuccessThresholds(),
):
    """Batched reward evaluation; returns (components dict, hold', success_now).

    Success pays every step while the predicate holds; an abnormal state both
    pays -lambda_abnormal and terminates the episode (handled by the caller).
    """
    hold, ok = update_hold(hold, x_err, theta_err, th)
    comp = {
        "r_success": w.lambda_success * ok.astype(np.float64),
        "r_dist": r_dist(x_err, theta_err, w),
        "r_reach": r_reach(p_ee, p_obj, w),
        "r_smooth": r_smooth(action, prev_action, qd, w),
        "r_term": -w.lambda_abnormal * np.asarray(abnormal, dtype=np.float64),
    }
    comp["total"] = (
        comp["r_success"] + comp["r_dist"] + comp["r_reach"] + comp["r_smooth"] + comp["r_term"]
    )
    return comp, hold, ok


def breakdown_single(x_err, theta_err, p_ee, p_obj, action, prev_action, qd, abnormal, hold,
                     w=RewardWeights(), th=SuccessThresholds()):
    """Scalar convenience wrapper returning a RewardBreakdown."""
    comp, hold2, ok = total_reward(
        np.asarray(x_err)[None],
        np.asarray([theta_err]),
        np.asarray(p_ee)[None],
        np.asarray(p_obj)[None],
        np.asarray(action)[None],
        np.asarray(prev_action)[None],
        np.asarray(qd)[None],
        np.asarray([abnormal]),
        np.asarray([hold]),
        w,
        th,
    )
    return (
        RewardBreakdown(
            r_success=float(comp["r_success"][0]),
            r_dist=float(comp["r_dist"][0]),
            r_reach=float(comp["r_reach"][0]),
            r_smooth=float(comp["r_smooth"][0]),
            r_term=float(comp["r_term"][0]),
        ),
        int(hold2[0]),
        bool(ok[0]),
    )
