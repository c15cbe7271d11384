"""Monte-Carlo evaluation: success-rate tables, the undock maneuver, trajectory MSE."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ffrl import sixdof
from ffrl.env import (
    TRAJECTORY_COLUMNS,
    EnvConfig,
    GoalPose,
    RewardConfig,
    SuccessCriterion,
    ZeroGEnv,
    build_observation,
    total_reward,
)
from ffrl.policy import actor_forward
from ffrl.sixdof import BodyState, MassProps, Wrench

UNDOCK_GOAL = (0.5, 0.0, 0.0)
UNDOCK_DELTAS = (0.0, -2.0, -7.0)
MASS_CONDITIONS = (0.0, 2.0, 9.0877)


@dataclass
class PDGains:
    kp: float = 3.0
    kd: float = 8.0
    kq: float = 0.5
    kw: float = 0.5


def pd_baseline_controller(state, goal, gains=None, f_max=0.85, tau_max=0.25):
    """Decoupled PD on position (world frame) and attitude (body frame)."""
    gains = gains or PDGains()
    pos_err = np.asarray(goal.position) - state.position
    rotvec = sixdof.quat_to_axis_angle(sixdof.quat_error(state.attitude, goal.attitude))
    force = gains.kp * pos_err - gains.kd * state.lin_vel
    torque = gains.kq * rotvec - gains.kw * state.ang_vel
    return Wrench(np.clip(force, -f_max, f_max), np.clip(torque, -tau_max, tau_max))


class PolicyController:
    """Deterministic (mean-action) policy."""

    def __init__(self, params, name="policy"):
        self.params = params
        self.name = name

    def act(self, state, goal, obs):
        mean, _ = actor_forward(self.params, obs)
        return np.asarray(mean, dtype=float)


class PDController:
    def __init__(self, gains=None, f_max=0.85, tau_max=0.25, name="pd"):
        self.gains = gains or PDGains()
        self.f_max, self.tau_max = f_max, tau_max
        self.name = name

    def act(self, state, goal, obs):
        return pd_baseline_controller(state, goal, self.gains, self.f_max, self.tau_max).as_array()


class NullController:
    name = "null"

    def act(self, state, goal, obs):
        return np.zeros(np.shape(obs)[:-1] + (6,))


# --- success-rate evaluation -------------------------------------------------


@dataclass
class EvalRow:
    policy: str
    mass_var: float
    success_mean: float
    success_std: float
    per_seed: list
    n_envs: int
    seeds: list


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=2)

    def to_table(self):
        lines = [f"{'Policy':<20} {'Mass Variation (kg)':>20} {'Success Rate':>18}"]
        for r in self.rows:
            mv = "0" if r.mass_var == 0 else f"+/-{r.mass_var:g}"
            lines.append(f"{r.policy:<20} {mv:>20} {r.success_mean:>8.2f}+/-{r.success_std:.2f}%")
        return "\n".join(lines) + "\n"


def _success_one_seed(controller, n_envs, seed, env_cfg, reward_cfg, criterion, hold_steps):
    env = ZeroGEnv(env_cfg.__class__(**{**asdict(env_cfg), "seed": seed}), reward_cfg, n_envs, criterion=criterion)
    obs = env.reset()
    streak = np.zeros(n_envs, dtype=np.int64)
    for t in range(env_cfg.episode_len):
        action = controller.act(env.state, env.goal, obs)
        obs, _, _, info = env.step(action)
        if t < env_cfg.episode_len - 1:
            ok = criterion.check(env.state, env.goal)
        else:
            ok = info.success
        streak = np.where(ok, streak + 1, 0)
    if hold_steps > 1:
        return float(np.mean(streak >= hold_steps))
    return float(np.mean(info.success))


def evaluate_success(
    controller,
    n_envs,
    seeds,
    pos_R=0.5,
    ori_R=0.5,
    mass_var=0.0,
    criterion=None,
    env_cfg=None,
    reward_cfg=None,
    hold_steps=0,
    name=None,
):
    """Success rate (percent) at the final step, one batch of envs per seed.

    ``hold_steps > 1`` additionally requires the tolerance to have held for
    that many consecutive final steps.
    """
    criterion = criterion or SuccessCriterion()
    base = env_cfg or EnvConfig()
    cfg = EnvConfig(
        **{**asdict(base), "pos_var_R": pos_R, "ori_var_R": ori_R, "mass_var_R": mass_var,
           "goal_sampling": "box", "ori_sampling": "symmetric"}
    )
    rates = [
        100.0 * _success_one_seed(controller, n_envs, s, cfg, reward_cfg, criterion, hold_steps)
        for s in seeds
    ]
    return EvalRow(
        policy=name or getattr(controller, "name", "policy"),
        mass_var=float(mass_var),
        success_mean=float(np.mean(rates)),
        success_std=float(np.std(rates)),
        per_seed=rates,
        n_envs=n_envs,
        seeds=list(seeds),
    )


def success_table(controllers, n_envs, seeds, mass_conditions=MASS_CONDITIONS, **kw):
    report = EvalReport()
    for c in controllers:
        for mv in mass_conditions:
            report.rows.append(evaluate_success(c, n_envs, seeds, mass_var=mv, **kw))
    return report


# --- trajectories ------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Rollout sampled every ``dt``; row 0 is the initial state with zero wrench."""

    dt: float
    time: np.ndarray
    position: np.ndarray
    attitude: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    wrench: np.ndarray
    reward: np.ndarray

    def __len__(self):
        return len(self.time)

    def channel(self, name):
        idx = TRAJECTORY_COLUMNS.index(name)
        return self.as_array()[:, idx]

    def as_array(self):
        steps = np.arange(len(self.time), dtype=float)
        return np.column_stack(
            [steps, self.time, self.position, self.attitude, self.lin_vel, self.ang_vel, self.wrench, self.reward]
        )

    def final_state(self):
        return BodyState(self.position[-1], self.attitude[-1], self.lin_vel[-1], self.ang_vel[-1])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRAJECTORY_COLUMNS)
            for k, row in enumerate(self.as_array()):
                w.writerow([k] + [repr(float(x)) for x in row[1:]])

    @classmethod
    def from_csv(cls, path):
        with open(path) as f:
            r = csv.reader(f)
            header = next(r)
            if header != TRAJECTORY_COLUMNS:
                raise ValueError(f"unexpected trajectory header {header}")
            data = np.array([[float(x) for x in row] for row in r])
        dt = float(data[1, 1] - data[0, 1]) if len(data) > 1 else 0.0
        return cls(dt, data[:, 1], data[:, 2:5], data[:, 5:9], data[:, 9:12], data[:, 12:15], data[:, 15:21], data[:, 21])


def rollout(controller, state, goal, props, env_cfg=None, reward_cfg=None, steps=None):
    env_cfg = env_cfg or EnvConfig()
    reward_cfg = reward_cfg or RewardConfig()
    steps = env_cfg.episode_len if steps is None else steps
    recs = {k: [] for k in ("position", "attitude", "lin_vel", "ang_vel", "wrench", "reward")}

    def record(s, u, r):
        recs["position"].append(s.position)
        recs["attitude"].append(s.attitude)
        recs["lin_vel"].append(s.lin_vel)
        recs["ang_vel"].append(s.ang_vel)
        recs["wrench"].append(u)
        recs["reward"].append(float(r))

    record(state, np.zeros(6), total_reward(state, goal, reward_cfg))
    for _ in range(steps):
        obs = build_observation(state, goal)
        action = np.asarray(controller.act(state, goal, obs), dtype=float)
        if not np.isfinite(action).all():
            raise FloatingPointError("controller produced a non-finite action")
        wrench = Wrench.from_action(action, env_cfg.f_max, env_cfg.tau_max)
        state = sixdof.step_dynamics(state, props, wrench, env_cfg.dt, env_cfg.body_frame_force)
        record(state, wrench.as_array(), total_reward(state, goal, reward_cfg))
    return TrajectoryRecord(
        dt=env_cfg.dt,
        time=np.arange(steps + 1) * env_cfg.dt,
        **{k: np.array(v) for k, v in recs.items()},
    )


def run_undock(controller, mass_delta, env_cfg=None, reward_cfg=None, goal=UNDOCK_GOAL):
    """0.5 m translation along +x from the docked pose at the origin."""
    env_cfg = env_cfg or EnvConfig()
    props = MassProps.scaled(max(env_cfg.base_mass + mass_delta, env_cfg.min_mass), env_cfg.base_mass)
    g = GoalPose(np.asarray(goal, dtype=float), sixdof.IDENTITY_QUAT.copy())
    return rollout(controller, BodyState.at_rest(), g, props, env_cfg, reward_cfg)


def trajectory_mse(a, b, channel="px"):
    """Mean squared difference of one channel over the common prefix."""
    if a.dt and b.dt and not np.isclose(a.dt, b.dt):
        raise ValueError(f"trajectories use different dt ({a.dt} vs {b.dt})")
    n = min(len(a), len(b))
    if n == 0:
        raise ValueError("trajectories have no overlapping samples")
    d = a.channel(channel)[:n] - b.channel(channel)[:n]
    return float(np.mean(d * d))


def undock_mse_table(controllers, deltas=UNDOCK_DELTAS, env_cfg=None, reward_cfg=None, channel="px"):
    """MSE of each mass-varied undock against the same controller's baseline-mass run.

    Returns ``(table, trajectories)``; ``table[name][delta]`` is the MSE and
    ``trajectories[name][delta]`` the underlying record.
    """
    table, trajs = {}, {}
    for c in controllers:
        runs = {d: run_undock(c, d, env_cfg, reward_cfg) for d in deltas}
        base = runs[deltas[0]]
        table[c.name] = {d: trajectory_mse(runs[d], base, channel) for d in deltas[1:]}
        trajs[c.name] = runs
    return table, trajs


def format_mse_table(table):
    names = list(table)
    deltas = list(next(iter(table.values())))
    lines = ["Mass Variation of Test".ljust(26) + "".join(n.rjust(18) for n in names)]
    for d in deltas:
        lines.append(f"Error: {d:+g} kg".ljust(26) + "".join(f"{table[n][d]:18.6f}" for n in names))
    return "\n".join(lines) + "\n"


def write_plot_data(out_dir, trajectories, payload_runs=None):
    """Per-figure CSVs: undock x traces per controller and mass delta, payload comparison."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    cols, series = [], []
    for name, runs in trajectories.items():
        for d, rec in runs.items():
            cols.append(f"{name}_dm{d:+g}_px")
            series.append(rec.channel("px"))
    if series:
        n = min(len(s) for s in series)
        time = next(iter(next(iter(trajectories.values())).values())).time[:n]
        path = os.path.join(out_dir, "fig2_undock_mass_variation.csv")
        _write_columns(path, ["time_s"] + cols, [time] + [s[:n] for s in series])
        paths.append(path)
    if payload_runs:
        cols, series = [], []
        for label, rec in payload_runs.items():
            for ch in ("px", "py", "qc"):
                cols.append(f"{label}_{ch}")
                series.append(rec.channel(ch))
        n = min(len(s) for s in series)
        time = next(iter(payload_runs.values())).time[:n]
        path = os.path.join(out_dir, "fig5_payload_undock.csv")
        _write_columns(path, ["time_s"] + cols, [time] + [s[:n] for s in series])
        paths.append(path)
        sim = next(iter(payload_runs.values()))
        path = os.path.join(out_dir, "fig6_sim_undock.csv")
        _write_columns(path, ["time_s", "sim_px", "sim_py", "sim_pz"], [sim.time, sim.channel("px"), sim.channel("py"), sim.channel("pz")])
        paths.append(path)
    return paths


def _write_columns(path, header, columns):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) for x in row])
