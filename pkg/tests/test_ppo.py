import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffrl.env import EnvConfig, ZeroGEnv
from ffrl.policy import MlpParams, PolicyParams, log_prob_and_entropy
from ffrl.ppo import (
    Batch,
    NumericError,
    PpoHyper,
    TrainConfig,
    clipped_surrogate,
    compute_gae,
    normalize_advantages,
    ppo_loss_and_grad,
    ppo_update,
    train,
)


def gae_brute_force(rewards, values, dones, bootstrap, gamma, lam):
    """Direct double sum of discounted TD residuals, truncated at episode ends."""
    T = len(rewards)
    v_next = np.append(values[1:], bootstrap)
    delta = rewards + gamma * v_next * (1 - dones) - values
    adv = np.zeros(T)
    for t in range(T):
        total, weight = 0.0, 1.0
        for l in range(T - t):
            total += weight * delta[t + l]
            if dones[t + l]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    r, v = rng.standard_normal(10), rng.standard_normal(10)
    d = np.zeros(10)
    adv, ret = compute_gae(r, v, d, 0.7, 0.9, 0.0)
    delta = r + 0.9 * np.append(v[1:], 0.7) - v
    np.testing.assert_allclose(adv, delta, atol=1e-15)
    np.testing.assert_allclose(ret, adv + v)


def test_gae_hand_example():
    adv, ret = compute_gae(np.ones(3), np.zeros(3), np.zeros(3), 0.0, 1.0, 1.0)
    np.testing.assert_array_equal(adv, [3.0, 2.0, 1.0])


def test_gae_matches_brute_force_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        T = 64
        r, v = rng.standard_normal(T), rng.standard_normal(T)
        d = (rng.uniform(size=T) < 0.05).astype(float)
        g, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        boot = rng.standard_normal()
        adv, _ = compute_gae(r, v, d, boot, g, lam)
        np.testing.assert_allclose(adv, gae_brute_force(r, v, d, boot, g, lam), atol=1e-10)


def test_gae_batched_over_envs():
    rng = np.random.default_rng(2)
    r, v = rng.standard_normal((32, 4)), rng.standard_normal((32, 4))
    d = (rng.uniform(size=(32, 4)) < 0.1).astype(float)
    boot = rng.standard_normal(4)
    adv, _ = compute_gae(r, v, d, boot, 0.99, 0.95)
    for k in range(4):
        np.testing.assert_allclose(adv[:, k], gae_brute_force(r[:, k], v[:, k], d[:, k], boot[k], 0.99, 0.95), atol=1e-12)


def test_clipped_surrogate_cases():
    assert clipped_surrogate(0.0, 0.0, 1.7, 0.2) == -1.7
    assert clipped_surrogate(np.log(2.0), 0.0, 1.0, 0.2) == pytest.approx(-1.2, abs=1e-15)
    assert clipped_surrogate(np.log(0.5), 0.0, -1.0, 0.2) == pytest.approx(0.8, abs=1e-15)


@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0.01, 0.9))
def test_clipped_surrogate_is_pessimistic(log_ratio, adv, eps):
    ratio = np.exp(log_ratio)
    val = clipped_surrogate(log_ratio, 0.0, adv, eps)
    assert -val <= ratio * adv + 1e-12
    assert -val <= np.clip(ratio, 1 - eps, 1 + eps) * adv + 1e-12


def test_normalize_advantages():
    a = normalize_advantages(np.random.default_rng(3).uniform(-5, 20, 1000))
    assert abs(a.mean()) < 1e-6 and abs(a.std() - 1) < 1e-6


def make_batch(rng, n, params, spread=0.3):
    obs = rng.standard_normal((n, 13))
    from ffrl.policy import actor_forward, critic_forward

    mean, log_std = actor_forward(params, obs)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    lp, _ = log_prob_and_entropy(mean, log_std, actions)
    # behaviour policy a little different from current so some ratios clip
    lp = lp + rng.uniform(-spread, spread, n)
    return Batch(obs, actions, lp, rng.standard_normal(n), critic_forward(params, obs) + rng.standard_normal(n))


def small_params(seed):
    rng = np.random.default_rng(seed)
    p = PolicyParams(
        MlpParams.init(rng, 13, 6, hidden=(8, 8), out_gain=0.5, dtype=np.float64),
        MlpParams.init(rng, 13, 1, hidden=(8, 8), dtype=np.float64),
        rng.uniform(-0.5, 0.2, 6),
    )
    return p


@pytest.mark.parametrize("seed", range(4))
def test_loss_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = small_params(seed)
    hyper = PpoHyper(entropy_coef=0.01)
    batch = make_batch(rng, 2 if seed < 2 else 16, p)
    _, grads = ppo_loss_and_grad(p, batch, hyper)
    g = grads.to_vector()
    theta = p.to_vector()
    h = 1e-6
    for i in rng.choice(len(theta), 60, replace=False):
        e = np.zeros_like(theta)
        e[i] = h
        lp = ppo_loss_and_grad(p.with_vector(theta + e), batch, hyper)[0]["loss"]
        lm = ppo_loss_and_grad(p.with_vector(theta - e), batch, hyper)[0]["loss"]
        num = (lp - lm) / (2 * h)
        assert abs(num - g[i]) <= 1e-3 * max(abs(num), abs(g[i])) + 1e-7


def test_zero_advantage_no_policy_gradient():
    rng = np.random.default_rng(5)
    p = small_params(5)
    batch = make_batch(rng, 32, p)
    batch.advantages[:] = 0.0
    _, grads = ppo_loss_and_grad(p, batch, PpoHyper(entropy_coef=0.0))
    for t in grads.actor.tensors():
        np.testing.assert_array_equal(t, 0.0)
    np.testing.assert_array_equal(grads.log_std, 0.0)


def test_single_transition_moves_mean_toward_good_action():
    p = small_params(6)
    obs = np.zeros((1, 13))
    from ffrl.policy import actor_forward

    mean0, log_std = actor_forward(p, obs)
    action = mean0 + 0.5
    lp, _ = log_prob_and_entropy(mean0, log_std, action)
    batch = Batch(obs, action, lp, np.array([1.0]), np.zeros(1))
    hyper = PpoHyper(epochs=1, minibatches=1, learning_rate=1e-3)
    # advantage normalization of a single sample would zero it; bypass via the raw loss
    _, grads = ppo_loss_and_grad(p, batch, hyper)
    p2 = p.with_vector(p.to_vector() - 1e-2 * grads.to_vector())
    mean1, _ = actor_forward(p2, obs)
    assert np.all(mean1 - mean0 > 0)


def test_unclipped_equivalence_for_huge_eps():
    rng = np.random.default_rng(7)
    p = small_params(7)
    batch = make_batch(rng, 64, p, spread=2.0)
    t_clip, _ = ppo_loss_and_grad(p, batch, PpoHyper(clip_eps=0.999999))
    from ffrl.policy import actor_forward

    mean, log_std = actor_forward(p, batch.obs)
    lp, _ = log_prob_and_entropy(mean, log_std, batch.actions)
    ratio = np.exp(lp - batch.log_probs)
    unclipped = -np.mean(ratio * batch.advantages)
    # eps < 1 by contract; with eps ~ 1 only ratios above 2 can clip
    mask = ratio < 2.0
    if mask.all():
        assert t_clip["policy_loss"] == pytest.approx(unclipped, rel=1e-12)
    assert t_clip["clip_fraction"] <= 1.0


def test_update_first_ratio_is_one_and_stats_in_range():
    rng = np.random.default_rng(8)
    p = small_params(8)
    batch = make_batch(rng, 256, p, spread=0.0)
    p2, stats = ppo_update(p, batch, PpoHyper(), np.random.default_rng(0))
    assert abs(stats["first_ratio"] - 1.0) < 1e-12
    assert 0.0 <= stats["clip_fraction"] <= 1.0
    assert not np.array_equal(p2.to_vector(), p.to_vector())


def test_update_rejects_nonfinite_loss():
    rng = np.random.default_rng(9)
    p = small_params(9)
    batch = make_batch(rng, 16, p)
    batch.returns[3] = np.nan
    with pytest.raises(NumericError) as e:
        ppo_update(p, batch, PpoHyper(), np.random.default_rng(0))
    assert e.value.term == "value_loss"


def test_hyper_validation():
    for bad in ({"gamma": 1.5}, {"lam": 0.0}, {"clip_eps": 1.0}, {"epochs": 0}):
        with pytest.raises(ValueError):
            PpoHyper(**bad)


def test_train_zero_iterations_returns_initial_params():
    env = ZeroGEnv(EnvConfig(), n_envs=2)
    cfg = TrainConfig(iterations=0, seed=4)
    res = train(env, PpoHyper(horizon=4), cfg)
    ref = PolicyParams.init(np.random.default_rng(np.random.SeedSequence(4).spawn(3)[0]))
    np.testing.assert_array_equal(res.params.to_vector(), ref.to_vector())
    assert res.log == []


def test_train_deterministic():
    def run():
        env = ZeroGEnv(EnvConfig(pos_var_R=0.2, seed=1, episode_len=20), n_envs=4)
        res = train(env, PpoHyper(horizon=8, epochs=2, minibatches=2), TrainConfig(iterations=6, seed=2))
        return res.params.to_vector(), res.log

    a, b = run(), run()
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1]


def test_train_partitioned_matches_shapes():
    envs = [ZeroGEnv(EnvConfig(seed=1, episode_len=20), n_envs=2, env_offset=2 * k) for k in range(2)]
    res = train(envs, PpoHyper(horizon=8, epochs=1), TrainConfig(iterations=3, seed=2, workers=2))
    assert len(res.log) == 3 and res.params.is_finite()
