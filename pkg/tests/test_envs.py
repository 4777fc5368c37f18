import itertools

import numpy as np
import pytest

from pwcredit import envs
from pwcredit.agent import sample_batch
from pwcredit.rng import stream


def _uniform(env):
    p = np.zeros((env.num_states, 2))
    for s in range(env.num_states):
        p[s, : env.actions_at(s)] = 1.0 / env.actions_at(s)
    return p


def _enumerate(env):
    """(decisions, states, rewards) for every decision sequence."""
    for d in itertools.product((0, 1), repeat=env.depth):
        states, rewards = env.rollout(d)
        yield d, states, rewards


# -- umbrella ---------------------------------------------------------------

def test_umbrella_rejects_short_chain():
    with pytest.raises(ValueError):
        envs.umbrella_make(1)


def test_umbrella_two_steps_noiseless_returns_final_reward():
    env = envs.umbrella_make(2, noise_mean=0.0, noise_std=0.0)
    rng = stream(0, "t")
    for a0 in (0, 1):
        ep = env.start(rng)
        total, done = 0.0, False
        a = a0
        while not done:
            _, r, done = ep.step(a, rng)
            total += r
            a = 0
        assert total == env.final_reward(a0)


def test_umbrella_target_action_gives_positive_final_reward():
    env = envs.umbrella_make(5, noise_std=3.0, target_action=0)
    rng = stream(1, "t")
    for _ in range(20):
        ep = env.start(rng)
        rewards, a, done = [], 0, False
        while not done:
            _, r, done = ep.step(a, rng)
            rewards.append(r)
        assert rewards[-1] == 1.0
        assert len(rewards) == env.T


@pytest.fixture(scope="module")
def umbrella_sample():
    env = envs.umbrella_make(20, noise_mean=0.3, noise_std=1.0)
    batch = sample_batch(_uniform(env), env, 100_000, stream(3, "policy"), stream(3, "env"))
    a0 = np.array([tr.actions[0] for tr in batch])
    ret = np.array([tr.ret for tr in batch])
    return env, a0, ret


def test_umbrella_mean_return(umbrella_sample):
    env, _, ret = umbrella_sample
    se = ret.std() / np.sqrt(ret.size)
    assert abs(ret.mean() - 19 * env.noise_mean) < 3 * se


def test_umbrella_conditional_return_variance(umbrella_sample):
    env, a0, ret = umbrella_sample
    for a in (0, 1):
        var = ret[a0 == a].var(ddof=1)
        assert abs(var - 19 * env.noise_std ** 2) < 0.05 * 19 * env.noise_std ** 2


def test_umbrella_bernoulli_noise_moments():
    env = envs.umbrella_make(4, noise_mean=1.0, noise_std=2.0, noise="bernoulli")
    rng = stream(5, "n")
    x = np.array([env.sample_noise(rng) for _ in range(20000)])
    assert set(np.unique(x)) == {-1.0, 3.0}
    assert abs(x.mean() - 1.0) < 0.05 and abs(x.std() - 2.0) < 0.05


def test_replay_determinism():
    env = envs.umbrella_make(6, noise_std=2.0)
    outs = []
    for _ in range(2):
        rng = stream(9, "replay")
        ep = env.start(rng)
        seq, a, done = [], 1, False
        while not done:
            seq.append(ep.step(a, rng))
            done = seq[-1][2]
            a = 0
        outs.append(seq)
    assert outs[0] == outs[1]


# -- nested DAG ---------------------------------------------------------------

def test_dag_rejects_bad_depth():
    with pytest.raises(ValueError):
        envs.dag_make(0)


def test_dag_smallest_instance():
    env = envs.dag_make(1, seed=0)
    assert env.num_phase1 == 1
    assert env.num_states == 3
    assert env.episode_length_bound == 1
    (_, states, rewards), = [x for x in _enumerate(env) if x[0] == env.target_bits]
    assert len(rewards) == 1 and rewards[0] == 1.0


def test_dag_depth8_counts():
    env = envs.dag_make(8, seed=0, reveal_padding=0)
    assert env.num_states == 31
    assert env.episode_length_bound == 15
    assert env.max_return == 8
    assert env.min_return == -8


@pytest.mark.parametrize("D,P", [(3, 0), (4, 2), (8, 1)])
def test_dag_layout(D, P):
    env = envs.dag_make(D, seed=D, reveal_padding=P)
    assert env.num_states == 4 * D - 1 + P * D
    seen = set()
    for d, states, rewards in _enumerate(env):
        assert len(rewards) == 2 * D - 1 + P * D
        seen.update(states)
        for t, s in enumerate(states):
            assert env.time_of(s) == t
        assert all(r == 0 for r in rewards[: D - 1])
        assert sum(r != 0 for r in rewards) == D
        assert all(env.actions_at(s) == (2 if env.is_phase1(s) else 1) for s in states[:-1])
    assert seen == set(range(env.num_states))


def test_optimal_policy_achieves_max_return():
    for seed in range(4):
        env = envs.dag_make(6, seed=seed, reveal_padding=seed % 2)
        _, rewards = env.rollout(env.target_bits)
        assert sum(rewards) == env.max_return


@pytest.mark.parametrize("D", range(1, 11))
def test_reveal_reward_depends_only_on_matched_decision(D):
    env = envs.dag_make(D, seed=D)
    for d, states, rewards in _enumerate(env):
        reveal = [(s, r) for s, r in zip(states[1:], rewards) if env.is_reveal(s)]
        assert len(reveal) == D
        for k, (s, r) in enumerate(reveal):
            j = D - 1 - k
            assert env.reveal_step_of(s) == k
            assert r == (1.0 if d[j] == env.target_bits[j] else -1.0)


def _enumerated_values(env):
    """Best return-to-go over every decision sequence visiting each state."""
    best = np.full(env.num_states, -np.inf)
    for _, states, rewards in _enumerate(env):
        togo = np.cumsum(rewards[::-1])[::-1]
        for t, s in enumerate(states[:-1]):
            best[s] = max(best[s], togo[t])
        best[states[-1]] = max(best[states[-1]], 0.0)
    return best


@pytest.mark.parametrize("D,P", [(1, 0), (2, 0), (3, 1), (5, 0), (8, 0), (10, 0), (4, 2)])
def test_optimal_values_match_enumeration(D, P):
    env = envs.dag_make(D, seed=D + P, reveal_padding=P)
    v = envs.dag_optimal_values(env)
    np.testing.assert_array_equal(v, _enumerated_values(env))
    assert v[0] == D


def test_mask_values():
    env = envs.dag_make(8, seed=0)
    v = envs.dag_optimal_values(env)
    np.testing.assert_array_equal(envs.dag_mask_values(v, env, 0), v)
    assert not envs.dag_mask_values(v, env, 8).any()
    half = envs.dag_mask_values(v, env, 4)
    for s in range(env.num_states):
        masked = env.is_phase1(s) and env.phase1_step(s) < 4
        assert half[s] == (0.0 if masked else v[s])
    for bad in (-1, 9):
        with pytest.raises(ValueError):
            envs.dag_mask_values(v, env, bad)


def test_target_bits_follow_seed():
    assert envs.dag_make(8, seed=3).target_bits == envs.dag_make(8, seed=3).target_bits
    assert len({envs.dag_make(8, seed=s).target_bits for s in range(10)}) > 1


def test_reachable_pairs_follow_visit_order():
    env = envs.dag_make(3, seed=0)
    R = envs.reachable_pairs(env)
    times = env.state_times()
    for i in range(env.num_states):
        for j in range(env.num_states):
            terminal = env.is_reveal(i) and env.reveal_step_of(i) == env.depth - 1
            assert R[i, j] == (times[j] > times[i] and not terminal)
