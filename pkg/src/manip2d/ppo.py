"""Large-batch on-policy training: rollouts, GAE, clipped-surrogate updates.

Rollout collection is data-parallel across environments; parameter updates
happen in one synchronized phase with a fixed minibatch order, so equal
seeds give bitwise identical training runs.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn, policy as pol
from .nn import Adam, ParamSet, Var, backward, no_grad
from .policy import (
    GsdeState,
    actor_forward,
    critic_forward,
    entropy_mean,
    gaussian_logprob,
    marginal_variance,
    sample_gsde,
)
from .resets import REGIONS


class DivergenceError(RuntimeError):
    pass


@dataclass
class PPOConfig:
    n_envs: int = 1024
    horizon: int = 24
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    total_env_steps: int = 50_000_000
    kl_limit: float = 0.5
    eval_every: int = 32
    eval_envs: int = 128
    checkpoint_every: int = 200
    seed: int = 0


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, N, obs_dim)
    priv: np.ndarray
    actions: np.ndarray  # pre-clamp actions, (T, N, 4)
    logprobs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    values: np.ndarray
    bootstrap: np.ndarray  # value of the true successor on done steps
    last_value: np.ndarray
    regions: np.ndarray


def collect_rollouts(params: ParamSet, env, gsde: GsdeState, cfg: PPOConfig) -> RolloutBatch:
    """Run `horizon` policy steps in every env; resets are handled inside."""
    T, N = cfg.horizon, env.n
    obs = np.empty((T, N, pol.OBS_DIM))
    priv = np.empty((T, N, pol.PRIV_DIM))
    actions = np.empty((T, N, pol.ACTION_DIM))
    logprobs = np.empty((T, N))
    rewards = np.empty((T, N))
    dones = np.empty((T, N), dtype=bool)
    truncated = np.empty((T, N), dtype=bool)
    values = np.empty((T, N))
    bootstrap = np.zeros((T, N))
    regions = np.empty((T, N), dtype=np.int64)

    for t in range(T):
        o = env.obs()
        p = env.privileged()
        obs[t] = o
        priv[t] = p
        with no_grad():
            mean, phi, sigma = actor_forward(o, params)
            values[t] = critic_forward(o, p, params).data
        act, pre, lp = sample_gsde(mean, phi, sigma, gsde)
        gsde.tick()
        actions[t] = pre
        logprobs[t] = lp
        regions[t] = env.region_tag
        r, done, trunc, info = env.step(act, gsde=gsde)
        rewards[t] = r
        dones[t] = done
        truncated[t] = trunc
        if info["terminal_obs"] is not None:
            with no_grad():
                vterm = critic_forward(info["terminal_obs"], info["terminal_priv"], params).data
            # timeouts bootstrap; abnormal terminations are true terminals
            bootstrap[t] = np.where(trunc, vterm, 0.0)

    with no_grad():
        last_value = critic_forward(env.obs(), env.privileged(), params).data
    return RolloutBatch(
        obs=obs, priv=priv, actions=actions, logprobs=logprobs, rewards=rewards,
        dones=dones, truncated=truncated, values=values, bootstrap=bootstrap,
        last_value=last_value, regions=regions,
    )


def compute_gae(batch: RolloutBatch, gamma: float, lam: float):
    """Generalized advantage estimation with timeout bootstrapping.

    Returns (advantages, returns); advantages are not yet normalized.
    """
    T, N = batch.rewards.shape
    adv = np.zeros((T, N))
    next_adv = np.zeros(N)
    for t in reversed(range(T)):
        if t == T - 1:
            next_value = batch.last_value
        else:
            next_value = batch.values[t + 1]
        v_next = np.where(batch.dones[t], batch.bootstrap[t], next_value)
        delta = batch.rewards[t] + gamma * v_next - batch.values[t]
        next_adv = delta + gamma * lam * (~batch.dones[t]) * next_adv
        adv[t] = next_adv
    returns = adv + batch.values
    return adv, returns


def ppo_update(batch: RolloutBatch, params: ParamSet, optimizer: Adam, cfg: PPOConfig,
               update_index: int = 0):
    """Clipped-surrogate epochs over shuffled minibatches; returns stats."""
    adv, returns = compute_gae(batch, cfg.gamma, cfg.gae_lambda)
    T, N = adv.shape
    total = T * N
    flat_obs = batch.obs.reshape(total, -1)
    flat_priv = batch.priv.reshape(total, -1)
    flat_act = batch.actions.reshape(total, -1)
    flat_lp = batch.logprobs.reshape(total)
    flat_ret = returns.reshape(total)
    flat_adv = adv.reshape(total)
    mean_, std_ = flat_adv.mean(), flat_adv.std()
    flat_adv = (flat_adv - mean_) / (std_ + 1e-8)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x0BB, update_index]))
    mb_size = total // cfg.minibatches
    kls, clip_fracs, pi_losses, v_losses, entropies = [], [], [], [], []
    for _ in range(cfg.epochs):
        perm = rng.permutation(total)
        for mb in range(cfg.minibatches):
            idx = perm[mb * mb_size : (mb + 1) * mb_size]
            params.zero_grad()
            mean, phi, sigma = actor_forward(flat_obs[idx], params)
            var = marginal_variance(phi, sigma)
            lp = gaussian_logprob(mean, var, Var(flat_act[idx]))
            logratio = nn.sub(lp, Var(flat_lp[idx]))
            ratio = nn.exp(logratio)
            a = Var(flat_adv[idx])
            surr1 = nn.mul(ratio, a)
            surr2 = nn.mul(nn.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a)
            pi_loss = nn.mul(nn.vmean(nn.minimum(surr1, surr2)), -1.0)
            v = critic_forward(flat_obs[idx], flat_priv[idx], params)
            v_loss = nn.vmean(nn.square(nn.sub(v, Var(flat_ret[idx]))))
            loss = nn.add(pi_loss, nn.mul(v_loss, cfg.value_coef))
            if cfg.entropy_coef != 0.0:
                ent = nn.vmean(nn.mul(nn.add(nn.log(var), 1.0 + np.log(2 * np.pi)), 0.5))
                loss = nn.sub(loss, nn.mul(ent, cfg.entropy_coef))
            backward(loss)
            params.clip_grad_norm(cfg.max_grad_norm)
            optimizer.step()

            with no_grad():
                lr_ = ratio.data
                kls.append(float(np.mean((lr_ - 1.0) - logratio.data)))
                clip_fracs.append(float(np.mean(np.abs(lr_ - 1.0) > cfg.clip)))
                pi_losses.append(float(pi_loss.data))
                v_losses.append(float(v_loss.data))
                entropies.append(entropy_mean(var.data))

    approx_kl = float(np.mean(kls))
    if approx_kl > cfg.kl_limit:
        raise DivergenceError(f"approx KL {approx_kl:.3f} exceeded {cfg.kl_limit}")
    return {
        "approx_kl": approx_kl,
        "clip_frac": float(np.mean(clip_fracs)),
        "pi_loss": float(np.mean(pi_losses)),
        "v_loss": float(np.mean(v_losses)),
        "entropy": float(np.mean(entropies)),
        "adv_mean": float(mean_),
        "adv_std": float(std_),
    }


class RegionTracker:
    """Per-region rolling success over finished episodes."""

    def __init__(self, alpha=0.02):
        self.alpha = alpha
        self.ema = {r: 0.0 for r in REGIONS}
        self.counts = {r: 0 for r in REGIONS}
        self.success_counts = {r: 0 for r in REGIONS}

    def update(self, events):
        for region_idx, success in events:
            r = REGIONS[region_idx]
            self.ema[r] = (1 - self.alpha) * self.ema[r] + self.alpha * float(success)
            self.counts[r] += 1
            self.success_counts[r] += int(success)

    @property
    def overall(self):
        tot = sum(self.counts.values())
        if tot == 0:
            return 0.0
        return sum(self.success_counts.values()) / tot


def evaluate_policy(params: ParamSet, env, episodes: int = None, deterministic=True):
    """Roll full episodes with the mean action; returns success fraction."""
    n = env.n
    env.reset_envs(np.arange(n))
    env.drain_events()
    done_count = 0
    successes = 0
    want = episodes or n
    for _ in range(env.cfg.episode_len + 1):
        with no_grad():
            mean, phi, sigma = actor_forward(env.obs(), params)
        env.step(mean.data)
        for _, success in env.drain_events():
            done_count += 1
            successes += int(success)
        if done_count >= want:
            break
    if done_count == 0:
        return 0.0
    return successes / done_count


def write_metrics_row(path, row, header):
    exists = os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if not exists:
            w.writerow(header)
        w.writerow(row)


METRIC_COLUMNS = [
    "update", "env_steps", "region", "success_ema", "mean_reward",
    "approx_kl", "clip_frac", "entropy", "action_scale",
]
