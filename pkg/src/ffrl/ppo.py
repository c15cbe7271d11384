"""PPO with a clipped surrogate and generalized advantage estimation."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ffrl.policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyParams,
    critic_forward,
    log_prob_and_entropy,
    mlp_backward,
    mlp_forward,
    sample_action,
    scale_inputs,
)

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = [
    "iteration", "mean_reward", "success_rate", "mean_level",
    "policy_loss", "value_loss", "clip_fraction", "wall_ms",
]


class NumericError(FloatingPointError):
    """A loss term went non-finite; ``term`` names which one."""

    def __init__(self, term, iteration=None):
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"non-finite {term}{where}")
        self.term = term
        self.iteration = iteration


@dataclass
class PpoHyper:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    learning_rate: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 1.0
    horizon: int = 64
    # multiplies env rewards before GAE; keeps value targets O(1)
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must be in (0, 1]")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.epochs < 1 or self.minibatches < 1 or self.horizon < 1:
            raise ValueError("epochs, minibatches and horizon must be >= 1")


def compute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Backward GAE recursion over the leading (time) axis.

    ``dones[t]`` cuts the bootstrap from step ``t`` to ``t + 1``. Returns
    ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap, dtype=float)
    running = np.zeros_like(rewards[0])
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * notdone[t] - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def clipped_surrogate(log_prob_new, log_prob_old, advantage, eps):
    """Per-sample negated clipped objective ``-min(ρÂ, clip(ρ, 1-ε, 1+ε)Â)``."""
    ratio = np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))
    return -np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def _surrogate_grad_mask(ratio, adv, eps):
    # gradient flows through ρ unless the clipped branch is strictly the minimum
    return ~(((ratio > 1.0 + eps) & (adv > 0)) | ((ratio < 1.0 - eps) & (adv < 0)))


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def take(self, idx):
        return Batch(self.obs[idx], self.actions[idx], self.log_probs[idx], self.advantages[idx], self.returns[idx])


def ppo_loss_and_grad(params, batch, hyper):
    """Total PPO loss on ``batch`` and its gradient with respect to ``params``.

    Returns ``(terms, grads)`` where ``terms`` holds the individual loss
    components and diagnostics.
    """
    dtype = params.log_std.dtype
    obs = np.asarray(batch.obs, dtype=dtype)
    n = len(obs)
    mean, actor_acts = mlp_forward(params.actor, obs)
    log_std = params.log_std
    new_lp, entropy = log_prob_and_entropy(mean, log_std, batch.actions)
    ratio = np.exp(new_lp - batch.log_probs)
    adv = batch.advantages
    pol = clipped_surrogate(new_lp, batch.log_probs, adv, hyper.clip_eps)
    value, critic_acts = mlp_forward(params.critic, obs)
    value = value[:, 0]
    v_err = value - batch.returns

    terms = {
        "policy_loss": float(np.mean(pol)),
        "value_loss": float(np.mean(v_err * v_err)),
        "entropy": float(np.mean(entropy)),
    }
    terms["loss"] = terms["policy_loss"] + hyper.value_coef * terms["value_loss"] - hyper.entropy_coef * terms["entropy"]
    for name in ("policy_loss", "value_loss", "entropy", "loss"):
        if not np.isfinite(terms[name]):
            raise NumericError(name)
    terms["mean_ratio"] = float(np.mean(ratio))
    terms["clip_fraction"] = float(np.mean(np.abs(ratio - 1.0) > hyper.clip_eps))
    terms["approx_kl"] = float(np.mean(batch.log_probs - new_lp))

    # dL/dlogp
    mask = _surrogate_grad_mask(ratio, adv, hyper.clip_eps)
    g_lp = np.where(mask, -adv * ratio, 0.0) / n
    inv_var = np.exp(-2.0 * log_std)
    diff = np.asarray(batch.actions) - mean
    g_mean = (g_lp[:, None] * diff * inv_var).astype(dtype)
    g_log_std = np.sum(g_lp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    g_log_std = g_log_std - hyper.entropy_coef
    g_value = (2.0 * hyper.value_coef / n * v_err)[:, None].astype(dtype)

    grads = PolicyParams(
        actor=mlp_backward(params.actor, actor_acts, g_mean),
        critic=mlp_backward(params.critic, critic_acts, g_value),
        log_std=np.asarray(g_log_std, dtype=dtype),
    )
    return terms, grads


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(params, batch, hyper, rng, optimizer=None):
    """Run ``epochs`` passes of shuffled minibatch updates over ``batch``.

    Returns ``(params, stats)``; ``stats`` averages the per-minibatch terms
    and records ``first_ratio`` (mean ratio on the first minibatch, before
    any gradient step).
    """
    optimizer = optimizer or Adam(hyper.learning_rate)
    batch = Batch(batch.obs, batch.actions, batch.log_probs, normalize_advantages(batch.advantages), batch.returns)
    n = len(batch)
    mb = max(1, n // hyper.minibatches)
    theta = params.to_vector()
    acc = {}
    count = 0
    first_ratio = None
    for _ in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            sub = batch.take(perm[start:start + mb])
            terms, grads = ppo_loss_and_grad(params, sub, hyper)
            if first_ratio is None:
                first_ratio = terms["mean_ratio"]
            g = grads.to_vector()
            norm = float(np.sqrt(np.dot(g.astype(float), g.astype(float))))
            if not np.isfinite(norm):
                raise NumericError("gradient")
            if hyper.max_grad_norm and norm > hyper.max_grad_norm:
                g = g * (hyper.max_grad_norm / norm)
            theta = optimizer.step(theta, g)
            params = params.with_vector(theta)
            np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX, out=params.log_std)
            theta[-len(params.log_std):] = params.log_std
            terms["grad_norm"] = norm
            for k, v in terms.items():
                acc[k] = acc.get(k, 0.0) + v
            count += 1
    stats = {k: v / count for k, v in acc.items()}
    stats["first_ratio"] = first_ratio
    return params, stats


@dataclass
class TrainConfig:
    iterations: int = 500
    seed: int = 0
    workers: int = 1
    init_log_std: float = 0.0
    checkpoint_every: int = 0
    record_wall_ms: bool = False
    # spread the first episode's step counters so batches mix episode phases
    stagger_episodes: bool = True
    # fixed multiplier on each observation feature during training; folded
    # into the first layer of the returned parameters
    obs_scale: object = None


@dataclass
class TrainResult:
    params: PolicyParams
    log: list = field(default_factory=list)


class _Partition:
    """One slice of the environment batch plus its action-noise stream."""

    def __init__(self, env, rng, stagger=False, obs_scale=None):
        self.env = env
        self.rng = rng
        self.scale = 1.0 if obs_scale is None else np.asarray(obs_scale, dtype=float)
        self.obs = env.reset() * self.scale
        if stagger:
            env.steps[:] = rng.integers(0, env.cfg.episode_len, env.n)
        self.last_success = np.zeros(env.n)

    def collect(self, params, horizon, gamma, reward_scale=1.0):
        n = self.env.n
        dim_obs = self.obs.shape[1]
        obs_buf = np.zeros((horizon, n, dim_obs))
        act_buf = np.zeros((horizon, n, 6))
        lp_buf = np.zeros((horizon, n))
        rew_buf = np.zeros((horizon, n))
        raw_rew = np.zeros((horizon, n))
        val_buf = np.zeros((horizon, n))
        done_buf = np.zeros((horizon, n))
        dtype = params.log_std.dtype
        for t in range(horizon):
            obs = self.obs
            x = obs.astype(dtype)
            mean, _ = mlp_forward(params.actor, x)
            value = mlp_forward(params.critic, x)[0][:, 0]
            action, lp = sample_action(mean.astype(float), params.log_std.astype(float), self.rng)
            self.obs, reward, done, info = self.env.step(action)
            self.obs = self.obs * self.scale
            raw_rew[t] = reward
            reward = reward * reward_scale
            if info.timeout.any():
                # time-limit bootstrap: the episode was truncated, not terminated
                tv = critic_forward(params, info.terminal_obs[info.timeout] * self.scale)
                reward = reward.copy()
                reward[info.timeout] += gamma * tv
            ended = info.timeout | info.failed
            if ended.any():
                self.last_success[ended] = info.success[ended]
            obs_buf[t], act_buf[t], lp_buf[t] = obs, action, lp
            rew_buf[t], val_buf[t], done_buf[t] = reward, value, done
        bootstrap = critic_forward(params, self.obs)
        return obs_buf, act_buf, lp_buf, rew_buf, raw_rew, val_buf, done_buf, bootstrap


def train(envs, hyper, cfg, params=None, on_iteration=None, on_checkpoint=None):
    """Alternate rollout collection and PPO updates for ``cfg.iterations``.

    ``envs`` is a :class:`~ffrl.env.ZeroGEnv` or a list of them (one per
    worker partition). Partition outputs are concatenated in list order, so
    the result does not depend on thread scheduling.
    """
    if not isinstance(envs, (list, tuple)):
        envs = [envs]
    root = np.random.SeedSequence(cfg.seed)
    init_ss, update_ss, act_ss = root.spawn(3)
    scale = None if cfg.obs_scale is None else np.asarray(cfg.obs_scale, dtype=float)
    if params is None:
        params = PolicyParams.init(np.random.default_rng(init_ss), init_log_std=cfg.init_log_std)
    elif scale is not None:
        params = scale_inputs(params, 1.0 / scale)

    def export(p):
        return p if scale is None else scale_inputs(p, scale)

    update_rng = np.random.default_rng(update_ss)
    parts = [
        _Partition(e, np.random.default_rng(s), cfg.stagger_episodes, scale)
        for e, s in zip(envs, act_ss.spawn(len(envs)))
    ]
    optimizer = Adam(hyper.learning_rate)
    result = TrainResult(export(params))
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 and len(parts) > 1 else None
    try:
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            if pool is None:
                outs = [p.collect(params, hyper.horizon, hyper.gamma, hyper.reward_scale) for p in parts]
            else:
                outs = list(pool.map(lambda p: p.collect(params, hyper.horizon, hyper.gamma, hyper.reward_scale), parts))
            obs, act, lp, rew, raw, val, done, boot = (
                np.concatenate([o[k] for o in outs], axis=-1 if k == 7 else 1) for k in range(8)
            )
            adv, ret = compute_gae(rew, val, done, boot, hyper.gamma, hyper.lam)
            batch = Batch(
                obs.reshape(-1, obs.shape[-1]),
                act.reshape(-1, act.shape[-1]),
                lp.reshape(-1),
                adv.reshape(-1),
                ret.reshape(-1),
            )
            try:
                params, stats = ppo_update(params, batch, hyper, update_rng, optimizer)
            except NumericError as err:
                raise NumericError(err.term, it) from err
            levels = [p.env.curriculum.levels for p in parts if p.env.curriculum is not None]
            row = {
                "iteration": it,
                "mean_reward": float(raw.mean()),
                "success_rate": float(np.mean(np.concatenate([p.last_success for p in parts]))),
                "mean_level": float(np.mean(np.concatenate(levels))) if levels else 1.0,
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "clip_fraction": stats["clip_fraction"],
                "wall_ms": (time.perf_counter() - t0) * 1e3 if cfg.record_wall_ms else None,
            }
            result.log.append(row)
            if on_iteration is not None:
                on_iteration(row, export(params))
            if on_checkpoint is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                on_checkpoint(it + 1, export(params))
    finally:
        if pool is not None:
            pool.shutdown()
    result.params = export(params)
    return result
