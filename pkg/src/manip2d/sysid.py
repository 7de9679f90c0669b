"""Actuator identification and domain randomization.

A hidden plant is excited with chirp references tracked by a joint PD loop;
CMA-ES fits friction/armature/delay so simulated trajectories match. The
randomization sampler draws the per-episode dynamics/actuation parameters
used during training, and the dynamics curriculum blends the simplified
training plant toward the identified one on task success.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import ActuatorParams, ArmSpec, DEFAULT_ARM, gravity_torque_batch
from .engine import BatchSim
from .world import SimParams, WorldState, REST_Q
from .geom2d import Pose2


@dataclass(frozen=True)
class ChirpSpec:
    f0: float = 0.2
    f1: float = 2.5
    duration: float = 6.0
    amplitude: float = 0.5  # radians around the rest configuration
    phase_offsets: tuple = (0.0, 2.0, 4.0)

    def __post_init__(self):
        if not 0 < self.f0 < self.f1 or self.duration <= 0:
            raise ValueError("need 0 < f0 < f1 and positive duration")


@dataclass(frozen=True)
class PlantParams:
    """Identified (or hidden) actuator parameters, per joint."""

    friction: np.ndarray = field(default_factory=lambda: np.zeros(3))
    armature: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delay_steps: int = 0

    def __post_init__(self):
        fr = np.asarray(self.friction, dtype=np.float64).reshape(3)
        ar = np.asarray(self.armature, dtype=np.float64).reshape(3)
        if np.any(fr < 0) or np.any(fr > 5) or np.any(ar < 0) or np.any(ar > 0.5):
            raise ValueError("friction in [0,5], armature in [0,0.5]")
        if not 0 <= int(self.delay_steps) <= 3:
            raise ValueError("delay_steps in {0..3}")
        object.__setattr__(self, "friction", fr)
        object.__setattr__(self, "armature", ar)
        object.__setattr__(self, "delay_steps", int(self.delay_steps))

    @staticmethod
    def scalar(friction=0.0, armature=0.0, delay=0) -> "PlantParams":
        return PlantParams(np.full(3, float(friction)), np.full(3, float(armature)), delay)

    def to_actuators(self, damping=0.2) -> ActuatorParams:
        return ActuatorParams(
            joint_friction=self.friction,
            armature=self.armature,
            delay_steps=np.full(3, self.delay_steps, dtype=np.int64),
            joint_damping=np.full(3, damping),
        )


@dataclass(frozen=True)
class CMAESConfig:
    population: int = 16
    sigma0: float = 0.3
    max_evals: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.sigma0 <= 0:
            raise ValueError("population >= 4 and sigma0 > 0 required")


# ------------------------------------------------------------------- chirp


def generate_chirp(spec: ChirpSpec, dt: float = 1.0 / 120.0):
    """Linear chirp reference: (times, per-joint targets (T, 3)).

    phase(t) = 2 pi (f0 t + (f1 - f0) t^2 / (2 T)); per-joint phase offsets
    decorrelate the three joints.
    """
    t = np.arange(0.0, spec.duration, dt)
    phase = 2.0 * np.pi * (spec.f0 * t + (spec.f1 - spec.f0) * t * t / (2.0 * spec.duration))
    refs = np.stack(
        [spec.amplitude * np.sin(phase + off) for off in spec.phase_offsets], axis=1
    )
    return t, refs


def rollout_plant(
    params: PlantParams,
    chirp: ChirpSpec,
    gains=(300.0, 200.0, 30.0),
    sim_params: SimParams = None,
    arm: ArmSpec = None,
    q0=None,
):
    """Joint trajectory (T, 3) tracking the chirp through the actuator path.

    Closed-loop joint PD around the reference (identical for every candidate,
    so the objective isolates the actuator parameters).
    """
    sim_params = sim_params or SimParams()
    arm = arm or DEFAULT_ARM
    q0 = REST_Q if q0 is None else np.asarray(q0)
    t, refs = generate_chirp(chirp, sim_params.dt)
    world = WorldState(
        q=q0.copy(),
        qd=np.zeros(3),
        gripper_opening=arm.gripper_max_opening,
        gripper_command="open",
        bodies=[],
        goal=Pose2(0.0, 0.0, 0.0),
    )
    sim = BatchSim.from_worlds([world], params.to_actuators(), sim_params, arm)
    kp = np.asarray(gains)
    kd = 2.0 * np.sqrt(kp * np.array([1.0, 0.5, 0.1]))
    out = np.empty_like(refs)
    for i in range(refs.shape[0]):
        target = q0 + refs[i]
        tau = (
            gravity_torque_batch(sim.q, arm, sim_params.gravity)
            + kp * (target[None] - sim.q)
            - kd * sim.qd
        )
        sim.step(tau)
        out[i] = sim.q[0]
    return out


def rollout_plant_batch(cands, chirp, gains=(300.0, 200.0, 30.0), sim_params=None, arm=None,
                        q0=None):
    """Evaluate several candidate plants in one batched simulation."""
    sim_params = sim_params or SimParams()
    arm = arm or DEFAULT_ARM
    q0 = REST_Q if q0 is None else np.asarray(q0)
    t, refs = generate_chirp(chirp, sim_params.dt)
    n = len(cands)
    world = WorldState(
        q=q0.copy(), qd=np.zeros(3), gripper_opening=arm.gripper_max_opening,
        gripper_command="open", bodies=[], goal=Pose2(0.0, 0.0, 0.0),
    )
    sim = BatchSim.from_worlds([world] * n, [c.to_actuators() for c in cands], sim_params, arm)
    kp = np.asarray(gains)
    kd = 2.0 * np.sqrt(kp * np.array([1.0, 0.5, 0.1]))
    out = np.empty((refs.shape[0], n, 3))
    for i in range(refs.shape[0]):
        target = q0 + refs[i]
        tau = (
            gravity_torque_batch(sim.q, arm, sim_params.gravity)
            + kp * (target[None] - sim.q)
            - kd * sim.qd
        )
        sim.step(tau)
        out[i] = sim.q
    return out


# ------------------------------------------------------------------ CMA-ES


class BudgetExhausted(RuntimeError):
    def __init__(self, best_x, best_f):
        super().__init__(f"optimization budget exhausted at f={best_f:.3e}")
        self.best_x = best_x
        self.best_f = best_f


def cmaes_minimize(f, x0, cfg: CMAESConfig, bounds=None, f_target=None, batch_f=None):
    """(mu/mu_w, lambda)-CMA-ES with rank-1 and rank-mu updates.

    Box constraints are handled by resampling; deterministic given cfg.seed.
    Returns (x_best, f_best, evals). batch_f, when given, evaluates a list of
    candidates at once (used to batch simulator rollouts).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dim = x0.size
    lam = cfg.population
    mu = lam // 2
    weights = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mu_eff = 1.0 / np.sum(weights**2)

    cc = (4 + mu_eff / dim) / (dim + 4 + 2 * mu_eff / dim)
    cs = (mu_eff + 2) / (dim + mu_eff + 5)
    c1 = 2 / ((dim + 1.3) ** 2 + mu_eff)
    cmu = min(1 - c1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((dim + 2) ** 2 + mu_eff))
    damps = 1 + 2 * max(0, np.sqrt((mu_eff - 1) / (dim + 1)) - 1) + cs
    chi_n = np.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim**2))

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC3A]))
    mean = x0.copy()
    sigma = cfg.sigma0
    C = np.eye(dim)
    ps = np.zeros(dim)
    pc = np.zeros(dim)
    evals = 0
    best_x, best_f = x0.copy(), np.inf

    def in_bounds(x):
        if bounds is None:
            return True
        lo, hi = bounds
        return np.all(x >= lo) and np.all(x <= hi)

    while evals < cfg.max_evals:
        d_eig, B = np.linalg.eigh(C)
        d_eig = np.sqrt(np.maximum(d_eig, 1e-20))
        xs, zs = [], []
        for _ in range(lam):
            for _ in range(100):
                z = rng.standard_normal(dim)
                x = mean + sigma * (B @ (d_eig * z))
                if in_bounds(x):
                    break
            else:
                x = np.clip(x, bounds[0], bounds[1]) if bounds is not None else x
            xs.append(x)
            zs.append(z)
        if batch_f is not None:
            fs = np.asarray(batch_f(xs))
        else:
            fs = np.array([f(x) for x in xs])
        evals += lam
        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < best_f:
            best_f = float(fs[order[0]])
            best_x = xs[order[0]].copy()
        if f_target is not None and best_f <= f_target:
            return best_x, best_f, evals

        sel = [xs[i] for i in order[:mu]]
        old_mean = mean
        mean = np.sum(weights[:, None] * np.asarray(sel), axis=0)

        y = (mean - old_mean) / sigma
        c_inv_sqrt = B @ np.diag(1.0 / d_eig) @ B.T
        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mu_eff) * (c_inv_sqrt @ y)
        sigma_path = np.linalg.norm(ps) / chi_n
        hsig = sigma_path < (1.4 + 2 / (dim + 1)) * np.sqrt(
            1 - (1 - cs) ** (2 * evals / lam)
        )
        pc = (1 - cc) * pc + hsig * np.sqrt(cc * (2 - cc) * mu_eff) * y
        arts = (np.asarray(sel) - old_mean) / sigma
        C = (
            (1 - c1 - cmu) * C
            + c1 * (np.outer(pc, pc) + (not hsig) * cc * (2 - cc) * C)
            + cmu * (arts.T * weights) @ arts
        )
        sigma = sigma * np.exp((cs / damps) * (sigma_path - 1))
        sigma = float(np.clip(sigma, 1e-12, 1e6))

    return best_x, best_f, evals


# ---------------------------------------------------------------- identify


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def identify(
    real_traj: np.ndarray,
    chirp: ChirpSpec,
    gains=(300.0, 200.0, 30.0),
    cfg: CMAESConfig = None,
    holdout: ChirpSpec = None,
    real_holdout: np.ndarray = None,
    sim_params: SimParams = None,
    arm: ArmSpec = None,
):
    """Fit PlantParams by minimizing joint-space RMSE against real_traj.

    Delay is relaxed to a continuous coordinate during CMA-ES, rounded at
    evaluation, then polished by an exhaustive sweep over {0..3}. Returns
    (params, report dict).
    """
    cfg = cfg or CMAESConfig()
    lo = np.array([0, 0, 0, 0, 0, 0, -0.49])
    hi = np.array([5, 5, 5, 0.5, 0.5, 0.5, 3.49])

    def to_params(x, delay_override=None):
        delay = int(np.clip(round(x[6]), 0, 3)) if delay_override is None else delay_override
        return PlantParams(friction=np.clip(x[0:3], 0, 5), armature=np.clip(x[3:6], 0, 0.5),
                           delay_steps=delay)

    def batch_objective(xs):
        cands = [to_params(x) for x in xs]
        trajs = rollout_plant_batch(cands, chirp, gains, sim_params, arm)
        return [_rmse(trajs[:, i], real_traj) for i in range(len(cands))]

    x0 = np.array([0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 1.0])
    best_x, best_f, evals = cmaes_minimize(
        None, x0, cfg, bounds=(lo, hi), batch_f=batch_objective
    )

    # exhaustive final sweep over the integer delay grid
    sweep = [to_params(best_x, delay_override=d) for d in range(4)]
    sweep_trajs = rollout_plant_batch(sweep, chirp, gains, sim_params, arm)
    sweep_err = [_rmse(sweep_trajs[:, i], real_traj) for i in range(4)]
    best_delay = int(np.argmin(sweep_err))
    params = to_params(best_x, delay_override=best_delay)

    report = {
        "rmse_fit_rad": float(min(sweep_err)),
        "evals": evals + 4,
        "identified": {
            "friction": params.friction.tolist(),
            "armature": params.armature.tolist(),
            "delay_steps": params.delay_steps,
        },
    }
    if holdout is not None and real_holdout is not None:
        fit_traj = rollout_plant(params, holdout, gains, sim_params, arm)
        zero_traj = rollout_plant(PlantParams.scalar(), holdout, gains, sim_params, arm)
        report["rmse_identified_rad"] = _rmse(fit_traj, real_holdout)
        report["rmse_zero_default_rad"] = _rmse(zero_traj, real_holdout)
    return params, report


# ------------------------------------------------------------ randomization


@dataclass(frozen=True)
class RandomizationSpec:
    """Per-episode dynamics/actuation randomization ranges.

    Direct ranges sample absolute values; multiplicative rows scale the
    nominal. Static/dynamic friction pairs are clamped to keep dynamic <=
    static (invariant wins over exact independence).
    """

    robot_friction_static: tuple = (0.3, 1.2)
    robot_friction_dynamic: tuple = (0.2, 1.0)
    object_friction_static: tuple = (1.0, 2.0)
    object_friction_dynamic: tuple = (0.9, 1.9)
    table_friction_static: tuple = (0.3, 0.6)
    table_friction_dynamic: tuple = (0.2, 0.5)
    robot_mass_scale: tuple = (0.7, 1.3)
    object_mass: tuple = (0.02, 0.2)
    receptive_mass_scale: tuple = (0.5, 1.5)
    actuator_scale: tuple = (0.8, 1.2)  # joint friction, armature, damping
    motor_delay_choices: tuple = (0, 1, 2)
    gain_scale: tuple = (0.8, 1.2)
    gripper_log_scale: tuple = (0.5, 2.0)  # stiffness and damping, log-uniform

    def to_dict(self):
        return {k: list(getattr(self, k)) for k in self.__dataclass_fields__}


def sample_randomization(spec: RandomizationSpec, rng, n: int, nominal: PlantParams = None):
    """Draw per-env parameters; returns a dict of arrays (the draw log)."""
    nominal = nominal or PlantParams.scalar()
    u = rng.uniform
    rs = u(*spec.robot_friction_static, n)
    rd = np.minimum(u(*spec.robot_friction_dynamic, n), rs)
    os_ = u(*spec.object_friction_static, n)
    od = np.minimum(u(*spec.object_friction_dynamic, n), os_)
    ts = u(*spec.table_friction_static, n)
    td = np.minimum(u(*spec.table_friction_dynamic, n), ts)
    log_lo, log_hi = np.log(spec.gripper_log_scale[0]), np.log(spec.gripper_log_scale[1])
    draws = {
        "robot_friction_static": rs,
        "robot_friction_dynamic": rd,
        "object_friction_static": os_,
        "object_friction_dynamic": od,
        "table_friction_static": ts,
        "table_friction_dynamic": td,
        "robot_mass_scale": u(*spec.robot_mass_scale, n),
        "object_mass": u(*spec.object_mass, n),
        "receptive_mass_scale": u(*spec.receptive_mass_scale, n),
        "joint_friction": nominal.friction[None, :] * u(*spec.actuator_scale, (n, 3)),
        "armature": nominal.armature[None, :] * u(*spec.actuator_scale, (n, 3)),
        "damping_scale": u(*spec.actuator_scale, (n, 3)),
        "motor_delay": rng.choice(np.asarray(spec.motor_delay_choices), size=n)
        + nominal.delay_steps,
        "gain_scale": u(*spec.gain_scale, n),
        "gripper_stiffness_scale": np.exp(u(log_lo, log_hi, n)),
        "gripper_damping_scale": np.exp(u(log_lo, log_hi, n)),
    }
    return draws


# -------------------------------------------------------------- curriculum


@dataclass
class CurriculumState:
    """Monotone interpolation from simplified toward identified dynamics."""

    alpha: float = 0.0
    gain_boost: float = 0.3
    threshold: float = 0.7
    rate: float = 0.02

    def update(self, success_ema: float) -> float:
        if not 0.0 <= success_ema <= 1.0:
            raise ValueError("success_ema must lie in [0, 1]")
        if success_ema >= self.threshold:
            self.alpha = min(1.0, self.alpha + self.rate)
        return self.alpha


def dynamics_curriculum(
    state: CurriculumState,
    success_ema: float,
    simplified: PlantParams,
    identified: PlantParams,
):
    """Advance alpha and blend plants; returns (PlantParams, gain_factor)."""
    a = state.update(success_ema)
    friction = (1 - a) * simplified.friction + a * identified.friction
    armature = (1 - a) * simplified.armature + a * identified.armature
    delay = int(round((1 - a) * simplified.delay_steps + a * identified.delay_steps))
    return PlantParams(friction, armature, delay), 1.0 + a * state.gain_boost
