"""Pairwise weights and advantage estimators.

Single-trajectory estimators (:func:`mc_advantages`, :func:`lambda_advantages`,
:func:`pwtd_advantages`, :func:`pwr_return_and_advantages`) work on plain
arrays and double as references for the batched versions used in training,
which accept either numpy tables or tape values.

Weight tables are indexed ``w[i, j]``: row ``i`` is the state receiving
credit, column ``j`` the state whose entering transition produced the reward
or TD-error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import diffmath as dm
from .envs import NestedDag, UmbrellaChain
from .trajectory import BatchIndex, Trajectory

ETA_INIT_RANGE = 0.01


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# --------------------------------------------------------------------------
# Weight sources

class WeightSource:
    """Produces f(S_t, S_t', t'-t) for arrays of state pairs and intervals."""

    def pair_weights(self, rows: np.ndarray, cols: np.ndarray, dt: np.ndarray):
        raise NotImplementedError


@dataclass(frozen=True)
class FixedWeights(WeightSource):
    matrix: np.ndarray

    def pair_weights(self, rows, cols, dt):
        return self.matrix[rows, cols]


@dataclass(frozen=True)
class ExponentialWeights(WeightSource):
    """(gamma * lam) ** (t' - t - 1); with lam = 1 this is plain discounting."""

    gamma: float = 1.0
    lam: float = 1.0

    def pair_weights(self, rows, cols, dt):
        return np.power(self.gamma * self.lam, np.maximum(dt - 1, 0).astype(np.float64))


@dataclass
class PairwiseWeightTable(WeightSource):
    """Meta-parameters eta (S x S); weights are sigmoid(eta)."""

    eta: np.ndarray

    @property
    def num_states(self) -> int:
        return self.eta.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return _sigmoid(self.eta)

    def pair_weights(self, rows, cols, dt):
        return self.weights[rows, cols]

    def bind(self, tape: dm.Tape) -> "TapedWeights":
        eta = tape.param(self.eta)
        return TapedWeights(eta=eta, w=dm.sigmoid(eta))


@dataclass(frozen=True)
class TapedWeights(WeightSource):
    """A weight table living on a tape, differentiable w.r.t. ``eta``."""

    eta: dm.DiffValue
    w: dm.DiffValue

    def pair_weights(self, rows, cols, dt):
        return dm.take(self.w, rows, cols)


WeightLike = Union[WeightSource, np.ndarray]


def as_weight_source(weights: WeightLike) -> WeightSource:
    if isinstance(weights, WeightSource):
        return weights
    arr = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"weight matrix must be square, got shape {arr.shape}")
    return FixedWeights(arr)


def weights_init(num_states: int, rng: np.random.Generator) -> PairwiseWeightTable:
    if num_states < 1:
        raise ValueError("num_states must be >= 1")
    eta = rng.uniform(-ETA_INIT_RANGE, ETA_INIT_RANGE, size=(num_states, num_states))
    return PairwiseWeightTable(eta)


# --------------------------------------------------------------------------
# Handcrafted weights

def handcrafted_umbrella(env: UmbrellaChain) -> np.ndarray:
    w = np.zeros((env.num_states, env.num_states))
    w[0, env.T] = 1.0
    w.flags.writeable = False
    return w


def handcrafted_dag(env: NestedDag) -> np.ndarray:
    """1 exactly where the reward entering column j is decided at row i."""
    S = env.num_states
    w = np.zeros((S, S))
    for step in range(env.depth):
        rows = [0] if step == 0 else [env.decision_state(step, b) for b in (0, 1)]
        k = env.depth - 1 - step
        cols = [env.reveal_state(k, b) for b in (0, 1)]
        for i in rows:
            w[i, cols] = 1.0
    w.flags.writeable = False
    return w


# --------------------------------------------------------------------------
# Single-trajectory estimators

def _pair_grid(traj: Trajectory, weights: WeightLike) -> np.ndarray:
    """T x T matrix W[t, c] = f(S_t, S_{c+1}, c+1-t), zero unless c+1 > t."""
    T = len(traj)
    t = np.arange(T)[:, None]
    c = np.arange(T)[None, :]
    dt = c + 1 - t
    rows = np.broadcast_to(traj.states[:-1][:, None], (T, T))
    cols = np.broadcast_to(traj.states[1:][None, :], (T, T))
    src = as_weight_source(weights)
    w = src.pair_weights(rows, cols, dt)
    if isinstance(w, dm.DiffValue):
        return dm.mul(w, (dt > 0).astype(np.float64))
    return np.where(dt > 0, w, 0.0)


def td_errors(traj: Trajectory, v, gamma: float = 1.0) -> np.ndarray:
    """delta_{t'} for t' = 1..T, with the terminal state's value taken as 0."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nxt = v[traj.states[1:]].copy()
    nxt[-1] = 0.0
    return traj.rewards + gamma * nxt - v[traj.states[:-1]]


def discounted_returns(rewards, gamma: float = 1.0) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def mc_advantages(traj: Trajectory, v, gamma: float = 1.0) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    return discounted_returns(traj.rewards, gamma) - v[traj.states[:-1]]


def lambda_advantages(traj: Trajectory, v, gamma: float = 1.0, lam: float = 1.0) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    delta = td_errors(traj, v, gamma)
    out = np.zeros(len(traj))
    acc = 0.0
    for t in range(len(traj) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        out[t] = acc
    return out


def pwtd_advantages(traj: Trajectory, v, weights: WeightLike, gamma: float = 1.0):
    """sum_{t'>t} f(S_t, S_t', t'-t) * delta_t'."""
    W = _pair_grid(traj, weights)
    delta = td_errors(traj, v, gamma)
    if isinstance(W, dm.DiffValue):
        return W @ delta.reshape(-1, 1)
    return W @ delta


def pwr_return_and_advantages(traj: Trajectory, v_pwr, weights: WeightLike):
    """Pairwise-weighted returns and the matching advantages."""
    W = _pair_grid(traj, weights)
    v = np.asarray(v_pwr, dtype=np.float64).reshape(-1)
    base = v[traj.states[:-1]]
    if isinstance(W, dm.DiffValue):
        G = W @ traj.rewards.reshape(-1, 1)
        return G, G - base.reshape(-1, 1)
    G = W @ traj.rewards
    return G, G - base


# --------------------------------------------------------------------------
# Batched estimators (N x 1 columns over the flattened steps of a batch)

def _lookup(table, states: np.ndarray):
    """table[states] as an N x 1 column; ``table`` is (S,), (S,1) or a tape column."""
    if isinstance(table, dm.DiffValue):
        return dm.take(table, states, np.zeros_like(states))
    return np.asarray(table, dtype=np.float64).reshape(-1)[states].reshape(-1, 1)


def batch_td_errors(index: BatchIndex, v, gamma: float = 1.0) -> np.ndarray:
    """(B, T) TD-errors; padded entries are 0."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nxt = np.where(index.terminal, 0.0, v[index.next_states])
    delta = index.rewards + gamma * nxt - v[index.prev_states]
    return np.where(index.valid, delta, 0.0)


def batch_returns(index: BatchIndex, gamma: float = 1.0) -> np.ndarray:
    """Discounted return G_t for every flattened step (N x 1)."""
    return batch_pair_sum(index, ExponentialWeights(gamma, 1.0), index.rewards)


def batch_pair_weights(index: BatchIndex, weights: WeightLike):
    src = as_weight_source(weights)
    w = src.pair_weights(index.row_states, index.col_states, index.dt)
    mask = index.causal.astype(np.float64)
    if isinstance(w, dm.DiffValue):
        return dm.mul(w, mask)
    return w * mask


def batch_pair_sum(index: BatchIndex, weights: WeightLike, per_traj_signal: np.ndarray):
    """sum_{t'>t} f(S_t, S_t', t'-t) * x_{t'} for every flattened step."""
    W = batch_pair_weights(index, weights)
    X = index.per_step(per_traj_signal)
    if isinstance(W, dm.DiffValue):
        return dm.sum_rows(dm.mul(W, X))
    return (W * X).sum(axis=1, keepdims=True)


def batch_mc(index: BatchIndex, v, gamma: float = 1.0) -> np.ndarray:
    return batch_returns(index, gamma) - _lookup(v, index.step_states)


def batch_lambda(index: BatchIndex, v, gamma: float = 1.0, lam: float = 1.0) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return batch_pair_sum(index, ExponentialWeights(gamma, lam), batch_td_errors(index, v, gamma))


def batch_pwtd(index: BatchIndex, v, weights: WeightLike, gamma: float = 1.0):
    return batch_pair_sum(index, weights, batch_td_errors(index, v, gamma))


def batch_pwr(index: BatchIndex, v_pwr, weights: WeightLike):
    """(G^PWR, advantages), both N x 1; differentiable if weights or v_pwr are taped."""
    G = batch_pair_sum(index, weights, index.rewards)
    base = _lookup(v_pwr, index.step_states)
    if isinstance(G, dm.DiffValue) or isinstance(base, dm.DiffValue):
        return G, dm.sub(G, base)
    return G, G - base


def standardize(adv, eps: float = 1e-8):
    """Zero-mean, unit-variance advantages across the batch."""
    if isinstance(adv, dm.DiffValue):
        n = adv.shape
        centered = adv - dm.expand(dm.mean(adv), n)
        std = dm.sqrt(dm.mean(dm.square(centered)))
        return centered / dm.expand(std + eps, n)
    centered = adv - adv.mean()
    return centered / (np.sqrt(np.mean(centered ** 2)) + eps)
