import itertools
from dataclasses import replace

import numpy as np
import pytest

from pwcredit import agent as ag
from pwcredit import credit, diffmath as dm, envs
from pwcredit.agent import Estimator, InnerConfig, OptimizerState
from pwcredit.credit import ExponentialWeights, FixedWeights, PairwiseWeightTable
from pwcredit.gradcheck import numerical_gradient, relative_error
from pwcredit.rng import Streams, stream
from pwcredit.trajectory import BatchIndex


def _agent(env, seed=0, config=InnerConfig()):
    return ag.agent_init(env, config, stream(seed, "init"))


def _batch(env, seed=0, n=8, policy=None):
    s = Streams(seed, "b")
    return ag.sample_batch(policy if policy is not None else _agent(env, seed), env, n, s.policy, s.env)


@pytest.fixture
def dag():
    return envs.dag_make(3, seed=1)


# -- sampling ---------------------------------------------------------------

def test_greedy_policy_on_deterministic_env_repeats(dag):
    probs = np.zeros((dag.num_states, 2))
    probs[:, 0] = 1.0
    batch = _batch(dag, policy=probs)
    for tr in batch[1:]:
        np.testing.assert_array_equal(tr.states, batch[0].states)
        np.testing.assert_array_equal(tr.rewards, batch[0].rewards)
    assert all(np.all(tr.log_probs == 0.0) for tr in batch)


def test_uniform_policy_action_frequency(dag):
    probs = np.full((dag.num_states, 2), 0.5)
    batch = _batch(dag, n=10_000, policy=probs)
    freq = np.mean([tr.actions[0] for tr in batch])
    assert abs(freq - 0.5) < 3 * 0.5 / np.sqrt(10_000)
    assert np.allclose(batch[0].log_probs[: dag.depth], np.log(0.5))


def test_sampling_is_reproducible(dag):
    a, b = _batch(dag, seed=4), _batch(dag, seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.states, y.states)
        np.testing.assert_array_equal(x.actions, y.actions)


def test_invalid_batch_size(dag):
    with pytest.raises(ValueError):
        ag.sample_batch(_agent(dag), dag, 0, stream(0, "p"))


# -- objectives -------------------------------------------------------------

def test_zero_advantages_give_zero_objective_and_gradient(dag):
    agent, batch = _agent(dag), _batch(dag)
    idx = BatchIndex(batch)
    t = dm.Tape()
    th = t.param(agent.theta)
    obj = ag.inner_policy_objective(t, th, agent.action_mask, idx, np.zeros(idx.num_steps), 0.0)
    assert obj.value[0, 0] == 0.0
    assert not t.backward(obj)[th.id].any()


def test_positive_advantage_raises_action_probability():
    env = envs.umbrella_make(2, noise_std=0.0)
    agent = _agent(env)
    tr = ag.Trajectory.from_lists([0, 1, 2], [0, 0], [0.0, 1.0])
    idx = BatchIndex([tr])
    t = dm.Tape()
    g = ag.policy_gradient(t, agent.theta, agent.action_mask, idx, np.array([1.0, 0.0]), 0.0)
    theta, _ = ag.apply_update(agent.theta, g.value, OptimizerState("sgd", lr=0.5), +1)
    assert replace(agent, theta=theta).probs()[0, 0] > agent.probs()[0, 0]


@pytest.mark.parametrize("entropy_coef", [0.0, 0.001, 0.5])
def test_analytic_policy_gradient_matches_tape_and_fd(dag, entropy_coef):
    agent, batch = _agent(dag), _batch(dag)
    idx = BatchIndex(batch)
    rng = np.random.default_rng(0)
    theta = np.where(agent.action_mask, rng.normal(size=agent.theta.shape), 0.0)
    adv = rng.normal(size=idx.num_steps)
    t = dm.Tape()
    th = t.param(theta)
    obj = ag.inner_policy_objective(t, th, agent.action_mask, idx, adv, entropy_coef)
    tape_grad = t.backward(obj)[th.id]
    analytic = ag.policy_gradient(dm.Tape(), theta, agent.action_mask, idx, adv, entropy_coef).value
    np.testing.assert_allclose(analytic, tape_grad, atol=1e-12)

    def f(x):
        return ag.inner_policy_objective(dm.Tape(), x, agent.action_mask, idx, adv,
                                         entropy_coef).value[0, 0]

    fd = numerical_gradient(f, theta) * agent.action_mask
    assert relative_error(analytic, fd) < 1e-6
    assert not analytic[~agent.action_mask].any()


def test_entropy_gradient_pushes_towards_uniform():
    env = envs.umbrella_make(3)
    agent = _agent(env)
    theta = agent.theta.copy()
    theta[0] = [4.0, -4.0]
    idx = BatchIndex([ag.Trajectory.from_lists([0, 1, 2, 3], [0, 0, 0], [0, 0, 1.0])])
    g = ag.policy_gradient(dm.Tape(), theta, agent.action_mask, idx, np.zeros(3), 1.0).value
    assert g[0, 0] < 0 < g[0, 1]
    fd = numerical_gradient(lambda x: ag.inner_policy_objective(
        dm.Tape(), x, agent.action_mask, idx, np.zeros(3), 1.0).value[0, 0], theta)
    assert relative_error(g[0], fd[0]) < 1e-6


def test_value_losses(dag):
    batch = _batch(dag)
    idx = BatchIndex(batch)
    table = np.random.default_rng(1).normal(size=(dag.num_states, 1))
    t = dm.Tape()
    p = t.param(table)
    loss = ag.value_losses(t, p, idx, table[idx.step_states, 0])
    assert loss.value[0, 0] == 0.0
    assert not t.backward(loss)[p.id].any()

    one = BatchIndex([ag.Trajectory.from_lists([0, 1], [0], [0.0])])
    t = dm.Tape()
    p = t.param(np.zeros((2, 1)))
    loss = ag.value_losses(t, p, one, np.array([3.0]))
    assert loss.value[0, 0] == 4.5
    assert t.backward(loss)[p.id][0, 0] == -3.0


def test_value_gradient_forms_agree(dag):
    idx = BatchIndex(_batch(dag))
    rng = np.random.default_rng(2)
    table, targets = rng.normal(size=(dag.num_states, 1)), rng.normal(size=idx.num_steps)
    t = dm.Tape()
    p = t.param(table)
    tape_grad = t.backward(ag.value_losses(t, p, idx, targets))[p.id]
    np.testing.assert_allclose(ag.value_gradient(dm.Tape(), table, idx, targets).value, tape_grad,
                               atol=1e-14)
    np.testing.assert_allclose(ag.value_gradient_np(table, idx, targets), tape_grad, atol=1e-14)


def test_psi_loss_gradient_wrt_eta_matches_fd(dag):
    idx = BatchIndex(_batch(dag))
    rng = np.random.default_rng(3)
    psi, eta = rng.normal(size=(dag.num_states, 1)), rng.normal(size=(dag.num_states,) * 2)

    def loss(e):
        t = dm.Tape()
        w = PairwiseWeightTable(e).bind(t)
        G, _ = credit.batch_pwr(idx, psi, w)
        return t, w, ag.value_losses(t, psi, idx, G)

    t, w, out = loss(eta)
    g = t.backward(out)[w.eta.id]
    fd = numerical_gradient(lambda e: loss(e)[2].value[0, 0], eta)
    assert relative_error(g, fd) < 1e-6


# -- optimizer --------------------------------------------------------------

def test_sgd_zero_gradient_is_identity():
    p = np.arange(6.0).reshape(3, 2)
    new, opt = ag.apply_update(p, np.zeros_like(p), OptimizerState("sgd", lr=0.1), +1)
    np.testing.assert_array_equal(new, p)
    assert opt.step == 1


def test_adam_first_step_is_sign():
    p, g = np.zeros((1, 4)), np.array([[3.0, -0.2, 1e-3, -50.0]])
    new, opt = ag.apply_update(p, g, OptimizerState(lr=0.01), +1)
    np.testing.assert_allclose(new, 0.01 * np.sign(g), rtol=1e-4)
    assert opt.step == 1 and opt.v.shape == p.shape
    _, opt = ag.apply_update(new, g, opt, +1)
    assert opt.step == 2


def test_apply_update_errors():
    with pytest.raises(dm.ShapeError):
        ag.apply_update(np.zeros((2, 1)), np.zeros((1, 2)), OptimizerState(), +1)
    with pytest.raises(ValueError):
        ag.apply_update(np.zeros(2), np.zeros(2), OptimizerState(), 0.5)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_two_step_update_chain_matches_fd(kind):
    rng = np.random.default_rng(4)
    theta0, eta = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))

    def run(e):
        t = dm.Tape()
        ep = t.param(e)
        th, opt = t.constant(theta0), OptimizerState(kind, lr=0.1)
        for _ in range(2):
            th, opt = ag.apply_update(th, dm.sigmoid(ep) * th - ep * 0.3, opt, +1)
        return t, ep, dm.total(dm.square(th))

    t, ep, out = run(eta)
    fd = numerical_gradient(lambda e: run(e)[2].value[0, 0], eta)
    assert relative_error(t.backward(out)[ep.id], fd) < 1e-6


# -- inner step --------------------------------------------------------------

def _step(env, agent, est, config=InnerConfig(), seed=0):
    s = Streams(seed, "step")
    return ag.inner_step(agent, env, est, config, s.policy, env_rng=s.env)


def test_lambda_one_equals_mc(dag):
    agent = _agent(dag)
    a, _ = _step(dag, agent, Estimator("lambda", lam=1.0))
    b, _ = _step(dag, agent, Estimator("mc"))
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)


def test_pwr_with_discount_weights_equals_mc(dag):
    agent = _agent(dag)
    agent = replace(agent, psi=agent.phi.copy())
    a, _ = _step(dag, agent, Estimator("pwr", ExponentialWeights(1.0, 1.0)))
    b, _ = _step(dag, agent, Estimator("mc"))
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)


def test_simplex_preserved_and_zero_lr_fixed_point(dag):
    agent = _agent(dag)
    w = FixedWeights(credit.handcrafted_dag(dag))
    for n in range(20):
        agent, _ = _step(dag, agent, Estimator("pwr", w), seed=n)
        p = agent.probs()
        assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-12)
        assert np.all(p[~agent.action_mask] == 0.0)
    still = InnerConfig(lr=0.0)
    start = _agent(dag, seed=1, config=still)
    frozen, _ = _step(dag, start, Estimator("pwr", w), still)
    for name in ("theta", "psi", "phi"):
        np.testing.assert_array_equal(getattr(frozen, name), getattr(start, name))


def test_inner_step_is_pure(dag):
    agent = _agent(dag)
    est = Estimator("pwtd", FixedWeights(np.full((dag.num_states,) * 2, 0.7)))
    a, _ = _step(dag, agent, est, seed=3)
    b, _ = _step(dag, agent, est, seed=3)
    for name in ("theta", "psi", "phi"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_handcrafted_update_at_s0_has_lower_variance_than_mc():
    env = envs.umbrella_make(20, noise_std=5.0)
    cfg = InnerConfig(optimizer="sgd", lr=0.1, entropy_coef=0.0)
    agent = _agent(env, config=cfg)
    hw = Estimator("pwr", FixedWeights(credit.handcrafted_umbrella(env)))
    deltas = {"pwr": [], "mc": []}
    for n in range(100):
        for name, est in (("pwr", hw), ("mc", Estimator("mc"))):
            new, _ = _step(env, agent, est, cfg, seed=n)
            deltas[name].append(new.theta[0, 0] - agent.theta[0, 0])
    assert np.var(deltas["pwr"]) < np.var(deltas["mc"])


def test_unknown_estimator_rejected():
    with pytest.raises(ValueError):
        Estimator("td0")
    with pytest.raises(ValueError):
        Estimator("pwr")


def test_nonfinite_update_raises(dag):
    agent = _agent(dag)
    agent = replace(agent, phi=np.full_like(agent.phi, np.inf))
    with pytest.raises((FloatingPointError, dm.DomainError)):
        _step(dag, agent, Estimator("mc"))


def test_phi_fitting_converges_on_fixed_policy():
    env = envs.dag_make(4, seed=0)
    # exact values of the uniform policy by enumerating all decision sequences
    total, count = np.zeros(env.num_states), np.zeros(env.num_states)
    for d in itertools.product((0, 1), repeat=env.depth):
        states, rewards = env.rollout(d)
        togo = np.cumsum(rewards[::-1])[::-1]
        for t, s in enumerate(states[:-1]):
            total[s] += togo[t]
            count[s] += 1
    visited = count > 0
    exact = total[visited] / count[visited]

    probs = np.zeros((env.num_states, 2))
    probs[:, 0] = 1.0
    probs[: env.num_phase1] = 0.5
    s = Streams(0, "phi")
    phi = np.zeros((env.num_states, 1))
    # decaying step size so the iterates settle instead of jittering
    for n in range(3000):
        idx = BatchIndex(ag.sample_batch(probs, env, 16, s.policy, s.env))
        g = ag.value_gradient_np(phi, idx, credit.batch_returns(idx))
        phi, _ = ag.apply_update(phi, g, OptimizerState("sgd", lr=20 / (n + 20)), -1)
    assert np.abs(phi[visited, 0] - exact).max() < 0.05
