"""Outer loop: metagradient updates of the pairwise weights.

Two modes.  *Online*: the agent keeps learning; each outer step updates theta
on the carried batch, samples a fresh batch with the updated policy, and
uses it both for the outer gradient and as the next step's inner batch.
*Reset*: every outer step starts from a freshly initialised agent, unrolls
K differentiable inner updates and differentiates the summed outer objective
through all of them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import credit
from . import diffmath as dm
from .agent import (Estimator, InnerConfig, OptimizerState, TabularActorCritic, agent_init,
                    apply_update, inner_policy_objective, inner_step, sample_batch,
                    value_gradient_np, value_of)
from .credit import FixedWeights, PairwiseWeightTable
from .metrics import DEFAULT_FRACTION, DEFAULT_WINDOW, RunMetrics
from .rng import Streams
from .trajectory import BatchIndex, Trajectory

META_KINDS = ("pwr", "pwtd")


@dataclass(frozen=True)
class MetaConfig:
    mode: str = "reset"
    inner_updates: int = 16
    outer_updates: int = 2000
    outer_optimizer: str = "adam"
    outer_lr: float = 0.01
    outer_beta1: float = 0.0
    outer_beta2: float = 0.999
    outer_eps: float = 1e-8
    outer_lam: float = 1.0
    clip_norm: float = 0.5

    def __post_init__(self):
        if self.mode not in ("online", "reset"):
            raise ValueError(f"unknown meta mode {self.mode!r}")
        if self.inner_updates < 1 or self.outer_updates < 1:
            raise ValueError("inner_updates and outer_updates must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.outer_optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown outer optimizer {self.outer_optimizer!r}")

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.outer_optimizer, self.outer_lr, self.outer_beta1,
                              self.outer_beta2, self.outer_eps)


@dataclass(frozen=True)
class OuterObjectiveRecord:
    step: int
    objective: float
    grad_norm: float
    clipped_norm: float
    snapshot: Optional[int] = None


@dataclass(frozen=True)
class MetaState:
    weights: PairwiseWeightTable
    outer_opt: OptimizerState
    step: int = 0


def meta_state_init(num_states: int, meta: MetaConfig, rng: np.random.Generator) -> MetaState:
    return MetaState(credit.weights_init(num_states, rng), meta.optimizer_state())


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def outer_objective(tape: dm.Tape, theta, mask: np.ndarray, batch: list[Trajectory], phi,
                    gamma: float = 1.0, lam: float = 1.0) -> dm.DiffValue:
    """(1/B) sum_t Psi(S_t, A_t) log pi_theta(A_t|S_t) with regular advantages
    from ``phi`` held constant; differentiable through ``theta``."""
    index = BatchIndex(batch)
    adv = credit.batch_lambda(index, value_of(phi), gamma, lam)
    return inner_policy_objective(tape, theta, mask, index, adv, 0.0)


def _outer_update(state: MetaState, grad: np.ndarray, meta: MetaConfig,
                  objective: float) -> tuple[MetaState, OuterObjectiveRecord]:
    if not np.all(np.isfinite(grad)) or not np.isfinite(objective):
        raise FloatingPointError(f"non-finite outer gradient at outer step {state.step}")
    clipped, norm = clip_by_global_norm(grad, meta.clip_norm)
    eta, opt = apply_update(state.weights.eta, clipped, state.outer_opt, +1)
    record = OuterObjectiveRecord(state.step, float(objective), norm,
                                  float(np.sqrt(np.sum(clipped * clipped))))
    return MetaState(PairwiseWeightTable(np.asarray(eta)), opt, state.step + 1), record


# --------------------------------------------------------------------------
# Reset mode

def reset_unroll(eta: np.ndarray, env, kind: str, inner: InnerConfig, meta: MetaConfig,
                 streams: Streams, value_override=None,
                 batches: Optional[list[list[Trajectory]]] = None):
    """Build the reset-mode objective on a fresh tape.

    Returns ``(tape, eta_param, objective, batches)``; ``batches`` holds the
    K + 1 batches used (batch k comes from the k-th policy iterate).  Passing
    ``batches`` replays them instead of sampling, which makes the objective a
    deterministic function of ``eta``.
    """
    if kind not in META_KINDS:
        raise ValueError(f"meta-learning needs estimator pwr or pwtd, got {kind!r}")
    if value_override is not None:
        value_override = np.asarray(value_override, dtype=np.float64).reshape(-1)
        if value_override.shape != (env.num_states,):
            raise ValueError(f"value override has shape {value_override.shape}, "
                             f"expected ({env.num_states},)")
    K = meta.inner_updates
    if batches is not None and len(batches) != K + 1:
        raise ValueError(f"expected {K + 1} batches, got {len(batches)}")
    tape = dm.Tape()
    tw = PairwiseWeightTable(eta).bind(tape)
    est = Estimator(kind, tw)
    agent = agent_init(env, inner, streams.init)
    used = []

    def next_batch(k, ag):
        if batches is not None:
            return batches[k]
        return sample_batch(ag, env, inner.batch_size, streams.policy, streams.env)

    batch = next_batch(0, agent)
    used.append(batch)
    objective = None
    for k in range(K):
        agent, _ = inner_step(agent, env, est, inner, streams.policy, tape=tape, batch=batch,
                              value_override=value_override)
        batch = next_batch(k + 1, agent)
        used.append(batch)
        baseline = value_override if value_override is not None else agent.phi
        term = outer_objective(tape, agent.theta, agent.action_mask, batch, baseline,
                               inner.gamma, meta.outer_lam)
        objective = term if objective is None else objective + term
    return tape, tw.eta, objective, used


def reset_meta_step(state: MetaState, env, kind: str, inner: InnerConfig, meta: MetaConfig,
                    streams: Streams, value_override=None) -> tuple[MetaState, OuterObjectiveRecord]:
    """One outer update from a freshly initialised inner agent."""
    tape, eta, objective, _ = reset_unroll(state.weights.eta, env, kind, inner, meta, streams,
                                           value_override)
    grad = tape.backward(objective)[eta.id]
    return _outer_update(state, grad, meta, objective.value[0, 0])


def reset_train(env, kind: str, inner: InnerConfig, meta: MetaConfig, seed: int,
                value_override=None, snapshot_every: int = 0, callback=None):
    """Run ``meta.outer_updates`` reset-mode steps.

    Outer step n draws its agent initialisation and trajectories from the
    stream ``(seed, "reset", n)``.  Returns (final state, records, snapshots).
    """
    root = Streams(seed, "meta")
    state = meta_state_init(env.num_states, meta, root.init)
    records, snapshots = [], {}
    for n in range(meta.outer_updates):
        state, rec = reset_meta_step(state, env, kind, inner, meta, Streams(seed, "reset", n),
                                     value_override)
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snapshots[n + 1] = state.weights.weights
            rec = replace(rec, snapshot=n + 1)
        records.append(rec)
        if callback is not None:
            callback(n, state, rec)
    return state, records, snapshots


# --------------------------------------------------------------------------
# Online mode

def online_meta_step(agent: TabularActorCritic, state: MetaState, env, kind: str,
                     inner: InnerConfig, meta: MetaConfig, streams: Streams,
                     carried: Optional[list[Trajectory]] = None):
    """Inner update on the carried batch, outer update on a fresh one.

    Returns ``(agent', state', next_carried, record)``; the fresh batch is
    sampled from the updated policy and becomes the next carried batch.
    """
    if kind not in META_KINDS:
        raise ValueError(f"meta-learning needs estimator pwr or pwtd, got {kind!r}")
    if carried is None:
        carried = sample_batch(agent, env, inner.batch_size, streams.policy, streams.env)
    tape = dm.Tape()
    tw = state.weights.bind(tape)
    updated, _ = inner_step(agent, env, Estimator(kind, tw), inner, streams.policy, tape=tape,
                            batch=carried, train_phi=False)
    fresh = sample_batch(updated, env, inner.batch_size, streams.policy, streams.env)
    objective = outer_objective(tape, updated.theta, updated.action_mask, fresh, agent.phi,
                                inner.gamma, meta.outer_lam)
    grad = tape.backward(objective)[tw.eta.id]
    new_state, record = _outer_update(state, grad, meta, objective.value[0, 0])

    index = BatchIndex(carried)
    g_phi = value_gradient_np(value_of(agent.phi), index, credit.batch_returns(index, inner.gamma))
    phi, phi_opt = apply_update(value_of(agent.phi), g_phi, agent.phi_opt, -1)
    new_agent = replace(updated.detached(), phi=phi, phi_opt=phi_opt)
    return new_agent, new_state, fresh, record


# --------------------------------------------------------------------------
# Training with fixed weights

def train_agent(env, estimator: Estimator, inner: InnerConfig, seed: int, max_episodes: int,
                fraction: float = DEFAULT_FRACTION, window: int = DEFAULT_WINDOW,
                stop_at_threshold: bool = True, stream_tag: str = "eval") -> RunMetrics:
    """Train a fresh agent with a fixed estimator, recording episode returns.

    Streams depend only on ``(seed, stream_tag)``, so different estimators
    run on the same seed see common random numbers.
    """
    streams = Streams(seed, stream_tag)
    agent = agent_init(env, inner, streams.init)
    metrics = RunMetrics(max_return=env.max_return, fraction=fraction, window=window)
    start = time.perf_counter()
    while metrics.num_episodes < max_episodes:
        agent, batch = inner_step(agent, env, estimator, inner, streams.policy, env_rng=streams.env)
        metrics.returns.extend(tr.ret for tr in batch)
        if stop_at_threshold and metrics.episodes_to_threshold is not None:
            break
    metrics.wall_clock = time.perf_counter() - start
    return metrics


def freeze_and_evaluate(weights, env, inner: InnerConfig, seed: int, max_episodes: int,
                        kind: str = "pwr", **kwargs) -> RunMetrics:
    """Train a new policy with the pairwise weights held fixed."""
    if isinstance(weights, PairwiseWeightTable):
        weights = weights.weights
    return train_agent(env, Estimator(kind, FixedWeights(np.asarray(weights))), inner, seed,
                       max_episodes, **kwargs)


def online_train(env, kind: str, inner: InnerConfig, meta: MetaConfig, seed: int,
                 max_episodes: int, fraction: float = DEFAULT_FRACTION,
                 window: int = DEFAULT_WINDOW, stop_at_threshold: bool = True,
                 snapshot_every: int = 0, callback=None):
    """Online metagradient learning from a single agent lifetime.

    Uses the same agent and environment streams as :func:`train_agent`, so an
    online meta run and a fixed-weight run on one seed are paired.  Returns
    ``(metrics, final meta state, records)``.
    """
    streams = Streams(seed, "eval")
    agent = agent_init(env, inner, streams.init)
    state = meta_state_init(env.num_states, meta, Streams(seed, "meta").init)
    metrics = RunMetrics(max_return=env.max_return, fraction=fraction, window=window)
    carried = sample_batch(agent, env, inner.batch_size, streams.policy, streams.env)
    metrics.returns.extend(tr.ret for tr in carried)
    records = []
    start = time.perf_counter()
    while metrics.num_episodes < max_episodes:
        agent, state, carried, rec = online_meta_step(agent, state, env, kind, inner, meta,
                                                      streams, carried)
        if snapshot_every and state.step % snapshot_every == 0:
            metrics.weight_snapshots[state.step] = state.weights.weights
            rec = replace(rec, snapshot=state.step)
        records.append(rec)
        metrics.returns.extend(tr.ret for tr in carried)
        if callback is not None:
            callback(state.step, state, rec)
        if stop_at_threshold and metrics.episodes_to_threshold is not None:
            break
    metrics.wall_clock = time.perf_counter() - start
    return metrics, state, records
