"""Zero-G reaching environment: observations, shaped reward, episode lifecycle.

The module-level functions are pure and operate on a single environment or
on a leading batch axis. :class:`ZeroGEnv` drives a batch of independent
environments, each with its own RNG stream, step counter and (optionally)
curriculum level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ffrl import sixdof
from ffrl.sixdof import BASE_MASS, BodyState, MassProps, Wrench

OBS_DIM = 13
ACT_DIM = 6
BASELINE_GOAL = (0.5, 0.5, 0.0)
TRAJECTORY_COLUMNS = [
    "step", "time_s",
    "px", "py", "pz", "qw", "qa", "qb", "qc",
    "vx", "vy", "vz", "wx", "wy", "wz",
    "fx", "fy", "fz", "tx", "ty", "tz",
    "reward",
]


@dataclass
class GoalPose:
    position: np.ndarray
    attitude: np.ndarray


@dataclass
class RewardConfig:
    pos_goal_theta: float = 0.1
    ori_goal_theta: float = 0.349
    pos_scale: float = 1.0
    ori_scale: float = 1.0
    lin_vel_penalty: float = 0.1
    ang_vel_penalty: float = 0.1

    def __post_init__(self):
        if self.pos_goal_theta <= 0 or self.ori_goal_theta <= 0:
            raise ValueError("goal_theta values must be positive")
        if self.lin_vel_penalty < 0 or self.ang_vel_penalty < 0:
            raise ValueError("velocity penalty factors must be >= 0")


@dataclass
class EnvConfig:
    dt: float = 0.016
    episode_len: int = 1000
    f_max: float = 0.85
    tau_max: float = 0.25
    base_mass: float = BASE_MASS
    min_mass: float = 0.5
    pos_var_R: float = 0.0
    ori_var_R: float = 0.0
    mass_var_R: float = 0.0
    # "box": per-axis U(-R, R) around the baseline goal;
    # "ball": uniform in a radius-R ball around the start position
    goal_sampling: str = "box"
    # "symmetric": quaternion a,b,c perturbed in [-R, R]; "positive": [0, R]
    ori_sampling: str = "symmetric"
    baseline_goal: tuple = BASELINE_GOAL
    body_frame_force: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.episode_len <= 0:
            raise ValueError("episode_len must be positive")
        if min(self.pos_var_R, self.ori_var_R, self.mass_var_R) < 0:
            raise ValueError("randomization half-ranges must be >= 0")
        if self.goal_sampling not in ("box", "ball"):
            raise ValueError(f"unknown goal_sampling {self.goal_sampling!r}")
        if self.ori_sampling not in ("symmetric", "positive"):
            raise ValueError(f"unknown ori_sampling {self.ori_sampling!r}")


def build_observation(state, goal):
    """13-vector ``[lin_vel, ang_vel, goal - position, quat_error]``."""
    pos_error = np.asarray(goal.position, dtype=float) - state.position
    q_err = sixdof.quat_error(state.attitude, goal.attitude)
    lead = np.broadcast_shapes(state.lin_vel.shape, pos_error.shape)
    return np.concatenate(
        [
            np.broadcast_to(state.lin_vel, lead),
            np.broadcast_to(state.ang_vel, lead),
            pos_error,
            np.broadcast_to(q_err, lead[:-1] + (4,)),
        ],
        axis=-1,
    )


def shaped_reward(error, goal_theta, scale):
    return (1.0 - np.tanh(error / goal_theta)) * scale


def velocity_penalty(lin_vel, ang_vel, cfg):
    lin = np.sum(np.square(lin_vel), axis=-1)
    ang = np.sum(np.square(ang_vel), axis=-1)
    return -cfg.lin_vel_penalty * lin - cfg.ang_vel_penalty * ang


def pose_errors(state, goal):
    """Position error norm (m) and geodesic attitude error (rad)."""
    pos = np.linalg.norm(np.asarray(goal.position) - state.position, axis=-1)
    ang = sixdof.quat_angle(sixdof.quat_error(state.attitude, goal.attitude))
    return pos, ang


def total_reward(state, goal, cfg):
    pos_err, ang_err = pose_errors(state, goal)
    return (
        shaped_reward(pos_err, cfg.pos_goal_theta, cfg.pos_scale)
        + shaped_reward(ang_err, cfg.ori_goal_theta, cfg.ori_scale)
        + velocity_penalty(state.lin_vel, state.ang_vel, cfg)
    )


def sample_reset(cfg, rng, pos_R, ori_R, mass_R):
    """Draw one environment's goal position, goal attitude and mass.

    The number of draws taken from ``rng`` depends only on
    ``cfg.goal_sampling``, never on the ranges, so streams stay aligned
    when an environment changes curriculum level.
    """
    u = rng.uniform(-1.0, 1.0, size=7)
    if cfg.goal_sampling == "ball":
        direction = rng.standard_normal(3)
        direction /= max(np.linalg.norm(direction), 1e-12)
        radius = pos_R * rng.uniform() ** (1.0 / 3.0)
        position = direction * radius
    else:
        position = np.asarray(cfg.baseline_goal, dtype=float) + pos_R * u[:3]
    v_ori = ori_R * (np.abs(u[3:6]) if cfg.ori_sampling == "positive" else u[3:6])
    attitude = sixdof.quat_normalize(np.concatenate([[1.0], v_ori]))
    mass = max(cfg.base_mass + mass_R * u[6], cfg.min_mass)
    return position, attitude, mass


def env_reset(cfg, rng, pos_R=None, ori_R=None, mass_R=None):
    """Single-environment reset: at rest at the origin, randomized goal and mass."""
    pos_R = cfg.pos_var_R if pos_R is None else pos_R
    ori_R = cfg.ori_var_R if ori_R is None else ori_R
    mass_R = cfg.mass_var_R if mass_R is None else mass_R
    position, attitude, mass = sample_reset(cfg, rng, pos_R, ori_R, mass_R)
    return BodyState.at_rest(), GoalPose(position, attitude), MassProps.scaled(mass, cfg.base_mass)


def env_step(state, goal, props, action, cfg, reward_cfg, step_count=0):
    """Clamp the action to the wrench limits, integrate one step, score it.

    Returns ``(state, observation, reward, done)`` where ``done`` is set on the
    step that reaches ``cfg.episode_len``.
    """
    action = np.asarray(action, dtype=float)
    if not np.isfinite(action).all():
        raise FloatingPointError("non-finite action")
    wrench = Wrench.from_action(action, cfg.f_max, cfg.tau_max)
    state = sixdof.step_dynamics(state, props, wrench, cfg.dt, cfg.body_frame_force)
    obs = build_observation(state, goal)
    reward = total_reward(state, goal, reward_cfg)
    return state, obs, reward, step_count + 1 >= cfg.episode_len


@dataclass
class SuccessCriterion:
    pos_tol: float = 0.1
    ori_tol_deg: float = 20.0

    def __post_init__(self):
        if self.pos_tol <= 0 or self.ori_tol_deg <= 0:
            raise ValueError("tolerances must be positive")

    def check(self, state, goal):
        pos, ang = pose_errors(state, goal)
        return (pos <= self.pos_tol) & (ang <= np.deg2rad(self.ori_tol_deg))


@dataclass
class StepInfo:
    timeout: np.ndarray
    failed: np.ndarray
    # success at the final step for envs whose episode just ended
    success: np.ndarray
    terminal_obs: np.ndarray
    wrench: np.ndarray = field(default=None)


class ZeroGEnv:
    """A batch of independent free-flyer reaching environments.

    Environment ``i`` draws from ``SeedSequence(seed).spawn`` child ``i +
    env_offset``, so a single environment built with the matching offset
    reproduces any member of a batch exactly.
    """

    def __init__(
        self,
        cfg,
        reward_cfg=None,
        n_envs=1,
        curriculum=None,
        rule=None,
        criterion=None,
        env_offset=0,
    ):
        self.cfg = cfg
        self.reward_cfg = reward_cfg or RewardConfig()
        self.n = n_envs
        self.curriculum = curriculum
        self.rule = rule
        self.criterion = criterion or SuccessCriterion()
        children = np.random.SeedSequence(cfg.seed).spawn(env_offset + n_envs)[env_offset:]
        self.rngs = [np.random.default_rng(c) for c in children]
        self.state = BodyState.at_rest(n_envs)
        self.goal = GoalPose(np.zeros((n_envs, 3)), np.tile(sixdof.IDENTITY_QUAT, (n_envs, 1)))
        self.mass = np.full(n_envs, cfg.base_mass)
        self.inertia = sixdof.cube_inertia(self.mass)
        self._ref_inertia = sixdof.cube_inertia(cfg.base_mass)
        self.steps = np.zeros(n_envs, dtype=np.int64)
        self.fixed_masses = None

    @property
    def props(self):
        return MassProps(self.mass, self.inertia)

    def _ranges(self, ids):
        if self.curriculum is not None:
            return self.curriculum.ranges(ids)
        k = len(ids)
        c = self.cfg
        return np.full(k, c.pos_var_R), np.full(k, c.ori_var_R), np.full(k, c.mass_var_R)

    def reset(self, ids=None):
        ids = np.arange(self.n) if ids is None else np.asarray(ids)
        pos_R, ori_R, mass_R = self._ranges(ids)
        for k, i in enumerate(ids):
            p, q, m = sample_reset(self.cfg, self.rngs[i], pos_R[k], ori_R[k], mass_R[k])
            self.goal.position[i] = p
            self.goal.attitude[i] = q
            self.mass[i] = m
        if self.fixed_masses is not None:
            self.mass[ids] = self.fixed_masses[ids]
        self.inertia[ids] = (self.mass[ids] / self.cfg.base_mass)[:, None] * self._ref_inertia
        self.state.position[ids] = 0.0
        self.state.attitude[ids] = sixdof.IDENTITY_QUAT
        self.state.lin_vel[ids] = 0.0
        self.state.ang_vel[ids] = 0.0
        self.steps[ids] = 0
        return self.observe()

    def observe(self):
        return build_observation(self.state, self.goal)

    def step(self, action):
        """Step every environment; finished environments auto-reset.

        Returns ``(obs, reward, done, info)``. ``obs`` is post-reset for envs
        that finished; their final observation is in ``info.terminal_obs``.
        """
        action = np.asarray(action, dtype=float)
        failed = ~np.isfinite(action).all(axis=-1)
        if failed.any():
            action = np.where(failed[:, None], 0.0, action)
        wrench = Wrench.from_action(action, self.cfg.f_max, self.cfg.tau_max)
        self.state = sixdof.step_dynamics(
            self.state, self.props, wrench, self.cfg.dt, self.cfg.body_frame_force
        )
        failed |= ~self.state.is_finite()
        reward = total_reward(self.state, self.goal, self.reward_cfg)
        reward = np.where(failed, 0.0, reward)
        self.steps += 1
        timeout = (self.steps >= self.cfg.episode_len) & ~failed
        success = self.criterion.check(self.state, self.goal) & timeout
        terminal_obs = self.observe()
        if self.curriculum is not None and self.rule is not None:
            self.curriculum.update(reward, self.rule)
        done = timeout | failed
        if done.any():
            obs = self.reset(np.flatnonzero(done))
        else:
            obs = terminal_obs
        info = StepInfo(timeout, failed, success, terminal_obs, wrench.as_array())
        return obs, reward, done, info

