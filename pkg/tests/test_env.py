import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffrl.curriculum import DEFAULT_LADDER, AdvancementRule, CurriculumState
from ffrl.env import (
    EnvConfig,
    GoalPose,
    RewardConfig,
    ZeroGEnv,
    build_observation,
    env_reset,
    env_step,
    shaped_reward,
    total_reward,
    velocity_penalty,
)
from ffrl.sixdof import BASE_MASS, BodyState, MassProps, quat_mul, quat_normalize

ID = np.array([1.0, 0, 0, 0])
finite = st.floats(-2, 2, allow_nan=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)
quat = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-2).map(
    lambda v: quat_normalize(np.array(v))
)


def test_observation_at_goal_is_identity():
    goal = GoalPose(np.array([0.3, -0.2, 0.1]), quat_normalize(np.array([0.9, 0.1, 0.2, -0.1])))
    state = BodyState(goal.position.copy(), goal.attitude.copy(), np.zeros(3), np.zeros(3))
    obs = build_observation(state, goal)
    assert obs.shape == (13,)
    np.testing.assert_allclose(obs, np.r_[np.zeros(9), 1, 0, 0, 0], atol=1e-15)


def test_observation_baseline_goal():
    obs = build_observation(BodyState.at_rest(), GoalPose(np.array([0.5, 0.5, 0.0]), ID))
    np.testing.assert_array_equal(obs[6:9], [0.5, 0.5, 0.0])


@settings(max_examples=200)
@given(vec3, quat, vec3, quat, vec3, vec3)
def test_observation_roundtrip(pos, att, gpos, gatt, v, w):
    state = BodyState(pos, att, v, w)
    obs = build_observation(state, GoalPose(gpos, gatt))
    np.testing.assert_allclose(state.position + obs[6:9], gpos, atol=1e-9)
    rebuilt = quat_mul(att, obs[9:13])
    assert min(np.abs(rebuilt - gatt).max(), np.abs(rebuilt + gatt).max()) < 1e-9
    np.testing.assert_array_equal(obs[:3], v)
    np.testing.assert_array_equal(obs[3:6], w)


def test_shaped_reward_values():
    assert shaped_reward(0.0, 0.1, 3.0) == 3.0
    # tanh(1) from exponentials
    e2 = math.exp(2.0)
    assert shaped_reward(0.1, 0.1, 1.0) == pytest.approx(1 - (e2 - 1) / (e2 + 1), abs=1e-15)
    assert shaped_reward(0.1, 0.1, 1.0) == pytest.approx(0.23840584, abs=1e-8)
    assert shaped_reward(1.0, 0.1, 1.0) < 1e-8


@given(st.floats(0, 100), st.floats(0, 100), st.floats(1e-3, 5))
def test_shaped_reward_monotone_and_bounded(e1, e2, theta):
    lo, hi = sorted([e1, e2])
    assert shaped_reward(lo, theta, 1.0) >= shaped_reward(hi, theta, 1.0)
    assert 0.0 <= shaped_reward(hi, theta, 1.0) <= 1.0


def test_velocity_penalty():
    cfg = RewardConfig(lin_vel_penalty=0.1, ang_vel_penalty=0.0)
    assert velocity_penalty(np.zeros(3), np.zeros(3), RewardConfig()) == 0.0
    assert velocity_penalty(np.array([1.0, 0, 0]), np.array([5.0, 0, 0]), cfg) == pytest.approx(-0.1)
    v, w = np.array([0.2, -0.4, 0.1]), np.array([-1.0, 0.3, 0.7])
    assert velocity_penalty(v, w, RewardConfig()) == velocity_penalty(-v, -w, RewardConfig())


def test_total_reward_decomposition():
    goal = GoalPose(np.array([0.5, 0.5, 0.0]), ID)
    at_goal = BodyState(goal.position.copy(), ID.copy(), np.zeros(3), np.zeros(3))
    assert total_reward(at_goal, goal, RewardConfig()) == 2.0
    moving = BodyState(goal.position.copy(), ID.copy(), np.array([0.1, 0, 0]), np.array([0, 0.2, 0]))
    cfg = RewardConfig()
    assert total_reward(moving, goal, cfg) == 2.0 + velocity_penalty(moving.lin_vel, moving.ang_vel, cfg)


@settings(max_examples=300)
@given(vec3, quat, vec3, quat, vec3, vec3, st.floats(0.1, 3), st.floats(0.1, 3))
def test_total_reward_bound(pos, att, gpos, gatt, v, w, ps, os):
    cfg = RewardConfig(pos_scale=ps, ori_scale=os)
    r = total_reward(BodyState(pos, att, v, w), GoalPose(gpos, gatt), cfg)
    assert r <= ps + os + 1e-12


def test_reset_baseline():
    state, goal, props = env_reset(EnvConfig(), np.random.default_rng(0))
    np.testing.assert_array_equal(goal.position, [0.5, 0.5, 0.0])
    np.testing.assert_array_equal(goal.attitude, ID)
    assert float(props.mass) == BASE_MASS
    np.testing.assert_array_equal(state.position, 0.0)


def test_reset_orientation_range():
    cfg = EnvConfig(ori_var_R=0.5)
    rng = np.random.default_rng(1)
    for _ in range(500):
        _, goal, _ = env_reset(cfg, rng)
        pre = goal.attitude / goal.attitude[0]  # undo normalization, w was 1
        assert np.all(np.abs(pre[1:]) <= 0.5)
        assert abs(np.linalg.norm(goal.attitude) - 1) < 1e-12


def test_reset_mass_clamp_and_determinism():
    cfg = EnvConfig(mass_var_R=9.0877, pos_var_R=0.3)
    masses = [float(env_reset(cfg, np.random.default_rng(s))[2].mass) for s in range(300)]
    assert min(masses) >= 0.5
    a = env_reset(cfg, np.random.default_rng(7))
    b = env_reset(cfg, np.random.default_rng(7))
    np.testing.assert_array_equal(a[1].position, b[1].position)


def test_ball_sampling_within_radius():
    cfg = EnvConfig(pos_var_R=1.0, ori_var_R=0.5, goal_sampling="ball", ori_sampling="positive")
    rng = np.random.default_rng(2)
    for _ in range(300):
        _, goal, _ = env_reset(cfg, rng)
        assert np.linalg.norm(goal.position) <= 1.0
        assert np.all(goal.attitude[1:] >= 0)


def test_step_zero_action_and_clamp():
    cfg, rcfg = EnvConfig(), RewardConfig()
    state, goal, props = env_reset(cfg, np.random.default_rng(0))
    r0 = total_reward(state, goal, rcfg)
    s1, obs, r, done = env_step(state, goal, props, np.zeros(6), cfg, rcfg)
    np.testing.assert_array_equal(s1.position, state.position)
    assert r == r0 and not done
    big = env_step(state, goal, props, np.array([2 * cfg.f_max, 0, 0, 0, 0, 0]), cfg, rcfg)
    sat = env_step(state, goal, props, np.array([cfg.f_max, 0, 0, 0, 0, 0]), cfg, rcfg)
    np.testing.assert_array_equal(big[0].lin_vel, sat[0].lin_vel)
    with pytest.raises(FloatingPointError):
        env_step(state, goal, props, np.array([np.nan, 0, 0, 0, 0, 0]), cfg, rcfg)


def test_zero_action_rollout_constant_reward():
    cfg, rcfg = EnvConfig(), RewardConfig()
    state, goal, props = env_reset(cfg, np.random.default_rng(0))
    rewards = []
    done = False
    t = 0
    while not done:
        state, _, r, done = env_step(state, goal, props, np.zeros(6), cfg, rcfg, t)
        rewards.append(r)
        t += 1
    assert len(rewards) == 1000
    assert len(set(rewards)) == 1


def test_batch_matches_single_env_reference():
    cfg = EnvConfig(pos_var_R=0.4, ori_var_R=0.3, mass_var_R=2.0, seed=11, episode_len=30)
    n = 5
    batch = ZeroGEnv(cfg, n_envs=n)
    singles = [ZeroGEnv(cfg, n_envs=1, env_offset=i) for i in range(n)]
    batch.reset()
    for s in singles:
        s.reset()
    rng = np.random.default_rng(0)
    for _ in range(75):
        act = rng.uniform(-1, 1, (n, 6))
        ob, rb, db, _ = batch.step(act)
        for i, s in enumerate(singles):
            o, r, d, _ = s.step(act[i:i + 1])
            np.testing.assert_array_equal(o[0], ob[i])
            assert r[0] == rb[i] and d[0] == db[i]


def test_env_i_unaffected_by_env_j_actions():
    cfg = EnvConfig(pos_var_R=0.4, seed=3)
    a, b = ZeroGEnv(cfg, n_envs=3), ZeroGEnv(cfg, n_envs=3)
    a.reset(), b.reset()
    rng = np.random.default_rng(1)
    for _ in range(50):
        act = rng.uniform(-1, 1, (3, 6))
        act2 = act.copy()
        act2[1] = rng.uniform(-1, 1, 6)
        oa, *_ = a.step(act)
        ob, *_ = b.step(act2)
        np.testing.assert_array_equal(oa[[0, 2]], ob[[0, 2]])


def test_nonfinite_action_fails_and_resets_only_that_env():
    env = ZeroGEnv(EnvConfig(), n_envs=2)
    env.reset()
    env.step(np.full((2, 6), 0.5))
    act = np.zeros((2, 6))
    act[0, 2] = np.inf
    obs, reward, done, info = env.step(act)
    assert list(info.failed) == [True, False]
    assert list(done) == [True, False]
    assert env.steps[0] == 0 and env.steps[1] == 2
    assert reward[0] == 0.0


def test_timeout_done_and_success_flag():
    cfg = EnvConfig(episode_len=10)
    env = ZeroGEnv(cfg, n_envs=1)
    env.reset()
    env.goal.position[:] = 0.0  # sitting on the goal
    for t in range(10):
        obs, r, done, info = env.step(np.zeros((1, 6)))
    assert done[0] and info.timeout[0] and info.success[0]
    assert env.steps[0] == 0


def test_levels_persist_across_resets():
    cur = CurriculumState(1, DEFAULT_LADDER)
    env = ZeroGEnv(EnvConfig(episode_len=5), n_envs=1, curriculum=cur, rule=AdvancementRule(-10.0, 3))
    env.reset()
    for _ in range(12):
        env.step(np.zeros((1, 6)))
    assert cur.levels[0] == 5


def test_seeded_rollout_bit_identical():
    def run():
        env = ZeroGEnv(EnvConfig(pos_var_R=0.5, ori_var_R=0.5, seed=9, episode_len=20), n_envs=4)
        obs = env.reset()
        out = []
        for _ in range(60):
            obs, r, d, _ = env.step(np.tanh(obs[:, :6] + obs[:, 6:12]))
            out.append(obs.copy())
        return np.array(out)

    np.testing.assert_array_equal(run(), run())
