"""Tabular softmax actor-critic: the inner loop.

Parameters may be plain arrays or values on a :class:`~pwcredit.diffmath.Tape`.
Gradients of the policy objective and the value losses are written out
analytically in tape operations, so an update ``theta' = theta + step(g)``
recorded on a tape is itself differentiable w.r.t. the pairwise weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import credit
from . import diffmath as dm
from .trajectory import BatchIndex, Trajectory

Array = Union[np.ndarray, dm.DiffValue]

INVALID_LOGIT = -1e9
PARAM_INIT_RANGE = 0.01


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, dm.DiffValue) else np.asarray(x)


def detach(x) -> Optional[np.ndarray]:
    if x is None:
        return None
    return np.array(value_of(x), dtype=np.float64)


# --------------------------------------------------------------------------
# Configuration and optimizer

@dataclass(frozen=True)
class InnerConfig:
    optimizer: str = "adam"
    lr: float = 0.01
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    gamma: float = 1.0
    lam: float = 1.0
    entropy_coef: float = 0.001
    standardize: bool = False

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    def optimizer_state(self) -> "OptimizerState":
        return OptimizerState(self.optimizer, self.lr, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class OptimizerState:
    kind: str = "adam"
    lr: float = 0.01
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[Array] = None
    v: Optional[Array] = None
    step: int = 0

    def detached(self) -> "OptimizerState":
        return replace(self, m=detach(self.m), v=detach(self.v))


def apply_update(param: Array, grad: Array, opt: OptimizerState,
                 direction: float) -> tuple[Array, OptimizerState]:
    """Move ``param`` along ``direction * grad`` (+1 ascent, -1 descent).

    Works identically on arrays and tape values; on a tape the Adam moment
    arithmetic is recorded so the result is differentiable through it.
    """
    if direction not in (1, -1, 1.0, -1.0):
        raise ValueError("direction must be +1 (ascent) or -1 (descent)")
    if value_of(param).shape != value_of(grad).shape:
        raise dm.ShapeError(f"apply_update: param {value_of(param).shape} vs grad {value_of(grad).shape}")
    t = opt.step + 1
    if opt.kind == "sgd":
        return param + (direction * opt.lr) * grad, replace(opt, step=t)
    m = (1.0 - opt.beta1) * grad
    if opt.m is not None and opt.beta1 != 0.0:
        m = opt.beta1 * opt.m + m
    v = (1.0 - opt.beta2) * (grad * grad)
    if opt.v is not None:
        v = opt.beta2 * opt.v + v
    m_hat = m * (1.0 / (1.0 - opt.beta1 ** t))
    v_hat = v * (1.0 / (1.0 - opt.beta2 ** t))
    new = param + (direction * opt.lr) * (m_hat / (v_hat ** 0.5 + opt.eps))
    return new, replace(opt, m=m, v=v, step=t)


# --------------------------------------------------------------------------
# Agent

@dataclass(frozen=True)
class TabularActorCritic:
    """theta: logits (S x A); psi: weighted-return baseline and phi:
    regular-return baseline, both S x 1 columns."""

    theta: Array
    psi: Array
    phi: Array
    action_mask: np.ndarray
    theta_opt: OptimizerState = field(default_factory=OptimizerState)
    psi_opt: OptimizerState = field(default_factory=OptimizerState)
    phi_opt: OptimizerState = field(default_factory=OptimizerState)

    @property
    def num_states(self) -> int:
        return self.action_mask.shape[0]

    def logits(self) -> np.ndarray:
        return np.where(self.action_mask, value_of(self.theta), INVALID_LOGIT)

    def probs(self) -> np.ndarray:
        z = self.logits()
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def detached(self) -> "TabularActorCritic":
        return replace(self, theta=detach(self.theta), psi=detach(self.psi), phi=detach(self.phi),
                       theta_opt=self.theta_opt.detached(), psi_opt=self.psi_opt.detached(),
                       phi_opt=self.phi_opt.detached())


def action_mask_for(env) -> np.ndarray:
    counts = [env.actions_at(s) for s in range(env.num_states)]
    A = max(counts)
    return np.arange(A)[None, :] < np.array(counts)[:, None]


def agent_init(env, config: InnerConfig, rng: np.random.Generator) -> TabularActorCritic:
    mask = action_mask_for(env)
    S, A = mask.shape
    theta = np.where(mask, rng.uniform(-PARAM_INIT_RANGE, PARAM_INIT_RANGE, size=(S, A)), 0.0)
    psi = rng.uniform(-PARAM_INIT_RANGE, PARAM_INIT_RANGE, size=(S, 1))
    phi = rng.uniform(-PARAM_INIT_RANGE, PARAM_INIT_RANGE, size=(S, 1))
    opt = config.optimizer_state()
    return TabularActorCritic(theta, psi, phi, mask, opt, opt, opt)


# --------------------------------------------------------------------------
# Sampling

def sample_batch(policy, env, batch_size: int, rng: np.random.Generator,
                 env_rng: Optional[np.random.Generator] = None) -> list[Trajectory]:
    """Run ``batch_size`` episodes with the given policy.

    ``policy`` is an agent or an S x A probability table.  One block of
    uniforms per batch is drawn from ``rng`` regardless of the actions taken,
    so runs sharing a policy stream stay aligned.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    probs = policy.probs() if isinstance(policy, TabularActorCritic) else np.asarray(policy)
    cum = np.cumsum(probs, axis=1)
    env_rng = rng if env_rng is None else env_rng
    H = env.episode_length_bound
    u = rng.random((batch_size, H))
    batch = []
    for b in range(batch_size):
        ep = env.start(env_rng)
        states, actions, rewards, logps = [ep.state], [], [], []
        t = 0
        done = False
        while not done:
            s = ep.state
            if env.actions_at(s) == 1:
                a = 0
            else:
                a = int(np.searchsorted(cum[s], u[b, t], side="right"))
                a = min(a, env.actions_at(s) - 1)
            s2, r, done = ep.step(a, env_rng)
            states.append(s2)
            actions.append(a)
            rewards.append(r)
            logps.append(np.log(probs[s, a]))
            t += 1
            if t > H:
                raise RuntimeError("episode exceeded its length bound")
        batch.append(Trajectory(np.array(states, dtype=np.intp), np.array(actions, dtype=np.intp),
                                np.array(rewards), np.array(logps)))
    return batch


# --------------------------------------------------------------------------
# Objectives and their analytic gradients

def _masked_logits(tape: dm.Tape, theta, mask: np.ndarray) -> dm.DiffValue:
    theta = tape.lift(theta)
    penalty = np.where(mask, 0.0, INVALID_LOGIT)
    return dm.add(dm.mul(theta, mask.astype(np.float64)), penalty)


def _selection(index: BatchIndex, num_states: int) -> np.ndarray:
    sel = np.zeros((num_states, index.num_steps))
    sel[index.step_states, np.arange(index.num_steps)] = 1.0
    return sel


def _col(tape: dm.Tape, x, n: int) -> dm.DiffValue:
    x = tape.lift(x if isinstance(x, dm.DiffValue) else np.asarray(x, dtype=np.float64).reshape(n, 1))
    if x.shape != (n, 1):
        raise dm.ShapeError(f"expected a column of {n} advantages, got {x.shape}")
    return x


def inner_policy_objective(tape: dm.Tape, theta, mask: np.ndarray, index: BatchIndex,
                           advantages, entropy_coef: float) -> dm.DiffValue:
    """(1/B) sum_b sum_t A_t log pi(a_t|s_t) + beta * mean entropy over visited steps."""
    N, B = index.num_steps, index.size
    adv = _col(tape, advantages, N)
    logp = dm.log_softmax_rows(_masked_logits(tape, theta, mask))
    taken = dm.take(logp, index.step_states, index.step_actions)
    pg = dm.dot(adv, taken) * (1.0 / B)
    if entropy_coef == 0.0:
        return pg
    probs = dm.softmax_rows(_masked_logits(tape, theta, mask))
    ent = -dm.sum_rows(dm.mul(probs, logp))
    visited = dm.take(ent, index.step_states, np.zeros(N, dtype=np.intp))
    return pg + entropy_coef * dm.mean(visited)


def policy_gradient(tape: dm.Tape, theta, mask: np.ndarray, index: BatchIndex,
                    advantages, entropy_coef: float) -> dm.DiffValue:
    """Gradient of :func:`inner_policy_objective` w.r.t. theta, as tape ops.

    For tabular softmax, d log pi(a|s) / d theta[s] = onehot(a) - pi(s) and
    d H(s) / d theta[s, a] = -pi(a|s) (log pi(a|s) + H(s)).
    """
    S, A = mask.shape
    N, B = index.num_steps, index.size
    adv = _col(tape, advantages, N)
    logits = _masked_logits(tape, theta, mask)
    probs = dm.softmax_rows(logits)
    rows = np.repeat(index.step_states[:, None], A, axis=1)
    cols = np.broadcast_to(np.arange(A)[None, :], (N, A))
    onehot = np.zeros((N, A))
    onehot[np.arange(N), index.step_actions] = 1.0
    score = dm.sub(onehot, dm.take(probs, rows, cols))
    weighted = dm.mul(score, dm.expand(adv, (N, A)))
    grad = dm.matmul(_selection(index, S), weighted) * (1.0 / B)
    if entropy_coef == 0.0:
        return grad
    logp = dm.log_softmax_rows(logits)
    ent = -dm.sum_rows(dm.mul(probs, logp))
    d_ent = -dm.mul(probs, dm.add(logp, dm.expand(ent, (S, A))))
    visits = np.bincount(index.step_states, minlength=S) / N
    return grad + dm.mul(d_ent, np.repeat(visits[:, None] * entropy_coef, A, axis=1))


def value_losses(tape: dm.Tape, table, index: BatchIndex, targets) -> dm.DiffValue:
    """Half mean squared error between table[s_t] and the targets."""
    N = index.num_steps
    pred = credit._lookup(tape.lift(table), index.step_states)
    err = dm.sub(_col(tape, targets, N), pred)
    return dm.mean(dm.square(err)) * 0.5


def value_gradient(tape: dm.Tape, table, index: BatchIndex, targets) -> dm.DiffValue:
    """Gradient of :func:`value_losses` w.r.t. the table (an S x 1 column)."""
    table = tape.lift(table)
    S, N = table.shape[0], index.num_steps
    err = dm.sub(_col(tape, targets, N), credit._lookup(table, index.step_states))
    return dm.matmul(_selection(index, S), err) * (-1.0 / N)


def value_gradient_np(table: np.ndarray, index: BatchIndex, targets: np.ndarray) -> np.ndarray:
    table = np.asarray(table).reshape(-1, 1)
    err = np.asarray(targets).reshape(-1) - table[index.step_states, 0]
    g = np.bincount(index.step_states, weights=err, minlength=table.shape[0])
    return (-g / index.num_steps).reshape(-1, 1)


# --------------------------------------------------------------------------
# One inner update

ESTIMATORS = ("mc", "lambda", "pwtd", "pwr")


@dataclass(frozen=True)
class Estimator:
    """Advantage estimator choice.  ``weights`` is required for pwtd/pwr."""

    kind: str
    weights: Optional[object] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.kind!r}; expected one of {ESTIMATORS}")
        if self.kind in ("pwtd", "pwr") and self.weights is None:
            raise ValueError(f"estimator {self.kind!r} needs a weight source")


def compute_advantages(agent: TabularActorCritic, index: BatchIndex, estimator: Estimator,
                       config: InnerConfig, value_override=None):
    """Returns (advantages, pwr_returns-or-None)."""
    v_reg = value_of(agent.phi) if value_override is None else np.asarray(value_override)
    if estimator.kind == "mc":
        return credit.batch_mc(index, v_reg, config.gamma), None
    if estimator.kind == "lambda":
        lam = config.lam if estimator.lam is None else estimator.lam
        return credit.batch_lambda(index, v_reg, config.gamma, lam), None
    if estimator.kind == "pwtd":
        return credit.batch_pwtd(index, v_reg, estimator.weights, config.gamma), None
    G, adv = credit.batch_pwr(index, agent.psi, estimator.weights)
    return adv, G


def inner_step(agent: TabularActorCritic, env, estimator: Estimator, config: InnerConfig,
               rng: np.random.Generator, tape: Optional[dm.Tape] = None,
               env_rng: Optional[np.random.Generator] = None,
               batch: Optional[list[Trajectory]] = None, value_override=None,
               train_phi: bool = True) -> tuple[TabularActorCritic, list[Trajectory]]:
    """Sample a batch (unless given) and apply one update to theta, psi, phi.

    With ``tape`` given, theta and psi updates are recorded on it and the
    returned agent holds tape values.  phi is always updated off-tape on the
    regular returns, and not at all when ``value_override`` is supplied.
    """
    if batch is None:
        batch = sample_batch(agent, env, config.batch_size, rng, env_rng)
    index = BatchIndex(batch)
    local = tape is None
    tp = dm.Tape() if local else tape

    adv, G = compute_advantages(agent, index, estimator, config, value_override)
    if config.standardize:
        adv = credit.standardize(adv)
    g_theta = policy_gradient(tp, agent.theta, agent.action_mask, index, adv, config.entropy_coef)
    theta_in = agent.theta if isinstance(agent.theta, dm.DiffValue) else tp.lift(agent.theta)
    theta, theta_opt = apply_update(theta_in, g_theta, agent.theta_opt, +1)

    psi, psi_opt = agent.psi, agent.psi_opt
    if G is not None:
        g_psi = value_gradient(tp, agent.psi, index, G)
        psi_in = agent.psi if isinstance(agent.psi, dm.DiffValue) else tp.lift(agent.psi)
        psi, psi_opt = apply_update(psi_in, g_psi, agent.psi_opt, -1)

    phi, phi_opt = agent.phi, agent.phi_opt
    if train_phi and value_override is None:
        returns = credit.batch_returns(index, config.gamma)
        g_phi = value_gradient_np(value_of(agent.phi), index, returns)
        phi, phi_opt = apply_update(value_of(agent.phi), g_phi, agent.phi_opt, -1)

    new = replace(agent, theta=theta, psi=psi, phi=phi,
                  theta_opt=theta_opt, psi_opt=psi_opt, phi_opt=phi_opt)
    if local:
        new = new.detached()
    _check_finite(new)
    return new, batch


def _check_finite(agent: TabularActorCritic) -> None:
    for name in ("theta", "psi", "phi"):
        if not np.all(np.isfinite(value_of(getattr(agent, name)))):
            raise FloatingPointError(f"non-finite {name} after inner update")
