"""Gaussian actor with state-dependent exploration and a privileged critic.

The actor sees a stack of the five most recent observation frames; the
critic additionally receives ground-truth simulator parameters. Exploration
noise is a linear map of the actor's last-layer features through a
periodically resampled Gaussian matrix, giving temporally correlated,
state-dependent noise. PPO ratios use the per-dimension marginal Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import ParamSet, Var, as_var, build_mlp, mlp_forward, no_grad

FRAME_DIM = 23
STACK = 5
OBS_DIM = FRAME_DIM * STACK  # 115
ACTION_DIM = 4
FEATURE_DIM = 128
PRIV_DIM = 25
CRITIC_IN = OBS_DIM + PRIV_DIM
LOGSTD_MIN, LOGSTD_MAX = -5.0, 2.0
VAR_FLOOR = 1e-8
GSDE_RESAMPLE_INTERVAL = 16

# frame layout: q(3) qd(3) ee(3) grip(1) obj_pose(3) obj_twist(3) goal(3) prev_action(4)
_OFF = np.zeros(FRAME_DIM)
_SCALE = np.ones(FRAME_DIM)
_OFF[0] = 1.42
_SCALE[0:3] = (1.72, 2.7, 2.7)  # joint ranges
_SCALE[3:6] = 10.0  # joint speeds
_OFF[7] = 0.3
_SCALE[6:9] = (0.6, 0.3, np.pi)  # ee pose vs workspace box
_OFF[9] = 0.04
_SCALE[9] = 0.04  # gripper opening
_OFF[11] = 0.3
_SCALE[10:13] = (0.6, 0.3, np.pi)  # object pose
_SCALE[13:16] = (2.0, 2.0, 10.0)  # object twist
_OFF[17] = 0.3
_SCALE[16:19] = (0.6, 0.3, np.pi)  # goal pose
OBS_OFFSET = _OFF
OBS_SCALE = _SCALE


class ShapeError(ValueError):
    pass


def normalize_frame(frame: np.ndarray) -> np.ndarray:
    """Fixed normalization, applied exactly once when a frame is built."""
    if frame.shape[-1] != FRAME_DIM:
        raise ShapeError(f"frame must have {FRAME_DIM} values, got {frame.shape}")
    return (frame - OBS_OFFSET) / OBS_SCALE


def build_frame(q, qd, ee, grip, obj_pose, obj_twist, goal, prev_action) -> np.ndarray:
    """Assemble and normalize observation frames, batched (N, 23)."""
    raw = np.concatenate(
        [q, qd, ee, np.asarray(grip)[:, None], obj_pose, obj_twist, goal, prev_action],
        axis=1,
    )
    return normalize_frame(raw)


class ObsStack:
    """Rolling five-frame history, oldest first, padded at episode start."""

    def __init__(self, n_envs: int):
        self.buf = np.zeros((n_envs, STACK, FRAME_DIM))

    def reset_env(self, idx, frame):
        self.buf[idx] = frame[:, None, :] if frame.ndim == 2 else frame[None, :]

    def push(self, frames):
        self.buf[:, :-1] = self.buf[:, 1:]
        self.buf[:, -1] = frames

    def flat(self) -> np.ndarray:
        return self.buf.reshape(self.buf.shape[0], OBS_DIM)


def init_actor_critic(seed: int = 0) -> ParamSet:
    """Actor trunk [256, 256, 128] + heads, critic trunk [256, 256, 128] -> 1."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    params = ParamSet()
    build_mlp(params, rng, "actor", (OBS_DIM, 256, 256, FEATURE_DIM))
    params.add("actor.mean_w", nn.orthogonal_init(rng, (FEATURE_DIM, ACTION_DIM), 0.01))
    params.add("actor.mean_b", np.zeros(ACTION_DIM))
    params.add("actor.logstd", np.full(ACTION_DIM, -2.8))
    params.add("actor.log_scale", np.zeros((ACTION_DIM, FEATURE_DIM)))
    build_mlp(params, rng, "critic", (CRITIC_IN, 256, 256, FEATURE_DIM))
    params.add("critic.v_w", nn.orthogonal_init(rng, (FEATURE_DIM, 1), 1.0))
    params.add("critic.v_b", np.zeros(1))
    return params


def actor_forward(obs, params: ParamSet):
    """(mean Var (N,4), features Var (N,128), sigma Var (4,128)).

    sigma combines the per-dimension log-std bias with the per-feature
    log-scale matrix, clamped to [-5, 2] before exponentiation.
    """
    obs = as_var(obs)
    if obs.data.ndim != 2 or obs.data.shape[1] != OBS_DIM:
        raise ShapeError(f"actor expects (N, {OBS_DIM}) observations, got {obs.data.shape}")
    phi = mlp_forward(obs, params, "actor", 3)
    mean = nn.tanh(nn.linear(phi, params["actor.mean_w"], params["actor.mean_b"]))
    logstd_col = nn.reshape(params["actor.logstd"], (ACTION_DIM, 1))
    log_sigma = nn.clip(nn.add(params["actor.log_scale"], logstd_col), LOGSTD_MIN, LOGSTD_MAX)
    sigma = nn.exp(log_sigma)
    return mean, phi, sigma


def critic_forward(obs, priv, params: ParamSet):
    """Privileged state value (N,)."""
    obs = as_var(obs)
    priv = as_var(priv)
    if priv.data.ndim != 2 or priv.data.shape[1] != PRIV_DIM:
        raise ShapeError(f"critic expects (N, {PRIV_DIM}) privileged inputs, got {priv.data.shape}")
    x = nn.concat([obs, priv], axis=1)
    h = mlp_forward(x, params, "critic", 3)
    v = nn.linear(h, params["critic.v_w"], params["critic.v_b"])
    return nn.take(v, (slice(None), 0))


def _transpose(v: Var) -> Var:
    return nn.Var(v.data.T, parents=(v,), bwd=lambda g: (g.T,))


def marginal_variance(phi, sigma):
    """Per-dimension marginal exploration variance: sum_j sigma_ij^2 phi_j^2."""
    phi2 = nn.square(phi)
    sig2 = nn.square(sigma)
    var = nn.matmul(phi2, _transpose(sig2))
    return nn.add(var, VAR_FLOOR)


def gaussian_logprob(mean, var, x):
    """Sum over dims of log N(x; mean, var); all args Var or array."""
    mean, var, x = as_var(mean), as_var(var), as_var(x)
    diff = nn.sub(x, mean)
    quad = nn.div(nn.square(diff), var)
    logdet = nn.log(var)
    per_dim = nn.mul(nn.add(nn.add(quad, logdet), np.log(2.0 * np.pi)), -0.5)
    return nn.vsum(per_dim, axis=1)


@dataclass
class GsdeState:
    """Exploration matrices, resampled at episode start and on a fixed period."""

    n_envs: int
    seed: int = 0
    resample_interval: int = GSDE_RESAMPLE_INTERVAL
    w: np.ndarray = field(init=False)
    steps_since_resample: np.ndarray = field(init=False)
    _rngs: list = field(init=False)

    def __post_init__(self):
        seeds = np.random.SeedSequence([self.seed, 0x65DE]).spawn(self.n_envs)
        self._rngs = [np.random.default_rng(s) for s in seeds]
        self.w = np.zeros((self.n_envs, ACTION_DIM, FEATURE_DIM))
        self.steps_since_resample = np.zeros(self.n_envs, dtype=np.int64)
        self.resample(np.arange(self.n_envs))

    def resample(self, idx):
        for i in np.atleast_1d(idx):
            self.w[i] = self._rngs[i].standard_normal((ACTION_DIM, FEATURE_DIM))
        self.steps_since_resample[idx] = 0

    def tick(self):
        """Advance the schedule; resample any env whose interval elapsed."""
        self.steps_since_resample += 1
        due = np.nonzero(self.steps_since_resample >= self.resample_interval)[0]
        if len(due):
            self.resample(due)


def sample_gsde(mean, phi, sigma, state: GsdeState):
    """Draw exploration actions: returns (action, pre-clamp action, logprob).

    noise_i = sum_j W_ij sigma_ij phi_j; the logprob is the per-dimension
    marginal Gaussian evaluated at the pre-clamp action.
    """
    mean_d = mean.data if isinstance(mean, Var) else mean
    phi_d = phi.data if isinstance(phi, Var) else phi
    sigma_d = sigma.data if isinstance(sigma, Var) else sigma
    noise = np.einsum("nij,ij,nj->ni", state.w, sigma_d, phi_d)
    pre = mean_d + noise
    action = np.clip(pre, -1.0, 1.0)
    var = phi_d**2 @ (sigma_d**2).T + VAR_FLOOR
    with no_grad():
        logprob = gaussian_logprob(mean_d, var, pre).data
    return action, pre, logprob


def entropy_mean(var: np.ndarray) -> float:
    return float(np.mean(0.5 * np.sum(1.0 + np.log(2.0 * np.pi * var), axis=1)))
