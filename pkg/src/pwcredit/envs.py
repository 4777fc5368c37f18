"""Episodic tabular environments: the umbrella chain and the nested DAG family.

Environments are immutable descriptions.  ``start(rng)`` opens an
:class:`Episode` cursor that carries whatever hidden history the dynamics
need; the agent only ever sees the integer state id ``episode.state``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .rng import stream


class EpisodicMdp(Protocol):
    num_states: int
    max_return: float
    episode_length_bound: int

    def actions_at(self, state: int) -> int: ...

    def start(self, rng: np.random.Generator) -> "Episode": ...


class Episode:
    """Cursor over one episode.  ``step`` returns (next state, reward, done)."""

    state: int
    done: bool

    def step(self, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        raise NotImplementedError


# --------------------------------------------------------------------------
# Umbrella chain

@dataclass(frozen=True)
class UmbrellaChain:
    """Chain s0 -> s1 -> ... -> sT where only the action at s0 matters.

    State ``T`` is the terminal state; the final reward is obtained on the
    transition into it.
    """

    T: int
    noise_mean: float = 0.0
    noise_std: float = 1.0
    final_reward_magnitude: float = 1.0
    target_action: int = 0
    noise: str = "gaussian"

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"umbrella chain needs T >= 2, got {self.T}")
        if self.target_action not in (0, 1):
            raise ValueError("target_action must be 0 or 1")
        if self.noise not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown noise distribution {self.noise!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def num_states(self) -> int:
        return self.T + 1

    @property
    def max_return(self) -> float:
        return (self.T - 1) * self.noise_mean + self.final_reward_magnitude

    @property
    def episode_length_bound(self) -> int:
        return self.T

    def actions_at(self, state: int) -> int:
        return 2 if state == 0 else 1

    def final_reward(self, a0: int) -> float:
        m = self.final_reward_magnitude
        return m if a0 == self.target_action else -m

    def sample_noise(self, rng: np.random.Generator) -> float:
        if self.noise == "gaussian":
            return float(rng.normal(self.noise_mean, self.noise_std))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return self.noise_mean + sign * self.noise_std

    def start(self, rng: np.random.Generator) -> "_UmbrellaEpisode":
        return _UmbrellaEpisode(self)


class _UmbrellaEpisode(Episode):
    def __init__(self, env: UmbrellaChain):
        self.env = env
        self.state = 0
        self.done = False
        self.a0 = -1

    def step(self, action, rng):
        if self.done:
            raise RuntimeError("episode already finished")
        env = self.env
        if self.state == 0:
            self.a0 = int(action)
        nxt = self.state + 1
        if nxt == env.T:
            reward = env.final_reward(self.a0)
            self.done = True
        else:
            reward = env.sample_noise(rng)
        self.state = nxt
        return nxt, reward, self.done


def umbrella_make(T: int, noise_mean: float = 0.0, noise_std: float = 1.0,
                  target_action: int = 0, **kwargs) -> UmbrellaChain:
    return UmbrellaChain(T=T, noise_mean=noise_mean, noise_std=noise_std,
                         target_action=target_action, **kwargs)


# --------------------------------------------------------------------------
# Nested DAG

@dataclass(frozen=True)
class NestedDag:
    """Two-phase DAG whose rewards are revealed in last-in-first-out order.

    Phase 1 has ``depth`` two-action decision steps without reward: state 0
    at step 0 and, for steps k >= 1, two states encoding the previous action
    bit.  Phase 2 has ``depth`` single-action reveal steps; reveal step k
    shows the decision of phase-1 step ``depth-1-k`` and pays +1 when it
    matches ``target_bits`` at that step, -1 otherwise.  ``reveal_padding``
    zero-reward filler states precede every reveal step.

    State ids follow visit order:

    * phase-1 step 0: ``0``; step k >= 1, bit b: ``1 + 2(k-1) + b``
    * before reveal k: fillers ``2D-1 + k(P+2) + p`` for p < P, then the
      reveal pair ``2D-1 + k(P+2) + P + b``
    """

    depth: int
    target_bits: tuple[int, ...]
    reveal_padding: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"DAG depth must be >= 1, got {self.depth}")
        if len(self.target_bits) != self.depth or any(b not in (0, 1) for b in self.target_bits):
            raise ValueError("target_bits must hold one 0/1 bit per depth")
        if self.reveal_padding < 0:
            raise ValueError("reveal_padding must be non-negative")

    # -- layout ----------------------------------------------------------
    @property
    def num_phase1(self) -> int:
        return 2 * self.depth - 1

    @property
    def num_states(self) -> int:
        return self.num_phase1 + self.depth * (self.reveal_padding + 2)

    @property
    def max_return(self) -> float:
        return float(self.depth)

    @property
    def min_return(self) -> float:
        return -float(self.depth)

    @property
    def episode_length_bound(self) -> int:
        return 2 * self.depth - 1 + self.reveal_padding * self.depth

    def decision_state(self, step: int, prev_bit: int = 0) -> int:
        return 0 if step == 0 else 1 + 2 * (step - 1) + prev_bit

    def filler_state(self, reveal_step: int, p: int) -> int:
        return self.num_phase1 + reveal_step * (self.reveal_padding + 2) + p

    def reveal_state(self, reveal_step: int, bit: int) -> int:
        return self.num_phase1 + reveal_step * (self.reveal_padding + 2) + self.reveal_padding + bit

    def is_phase1(self, state: int) -> bool:
        return state < self.num_phase1

    def phase1_step(self, state: int) -> int:
        """Decision step of a phase-1 state (-1 for phase-2 states)."""
        if state == 0:
            return 0
        if state < self.num_phase1:
            return 1 + (state - 1) // 2
        return -1

    def reveal_step_of(self, state: int) -> int:
        """Reveal step a phase-2 state belongs to (fillers count toward it)."""
        if state < self.num_phase1:
            return -1
        return (state - self.num_phase1) // (self.reveal_padding + 2)

    def is_reveal(self, state: int) -> bool:
        if state < self.num_phase1:
            return False
        return (state - self.num_phase1) % (self.reveal_padding + 2) >= self.reveal_padding

    def time_of(self, state: int) -> int:
        """Time step at which ``state`` is occupied in every episode."""
        if state < self.num_phase1:
            return self.phase1_step(state)
        offset = (state - self.num_phase1) % (self.reveal_padding + 2)
        k = self.reveal_step_of(state)
        return self.depth + k * (self.reveal_padding + 1) + min(offset, self.reveal_padding)

    def state_times(self) -> np.ndarray:
        return np.array([self.time_of(s) for s in range(self.num_states)])

    def matched_decision_step(self, reveal_step: int) -> int:
        return self.depth - 1 - reveal_step

    def actions_at(self, state: int) -> int:
        return 2 if state < self.num_phase1 else 1

    # -- dynamics --------------------------------------------------------
    def reveal_reward(self, reveal_step: int, bit: int) -> float:
        return 1.0 if bit == self.target_bits[self.matched_decision_step(reveal_step)] else -1.0

    def start(self, rng: np.random.Generator) -> "_DagEpisode":
        return _DagEpisode(self)

    def rollout(self, decisions) -> tuple[list[int], list[float]]:
        """Deterministic rollout for a full decision sequence."""
        ep = self.start(None)
        states, rewards = [ep.state], []
        i = 0
        while not ep.done:
            a = decisions[i] if self.is_phase1(ep.state) else 0
            if self.is_phase1(ep.state):
                i += 1
            s, r, _ = ep.step(a, None)
            states.append(s)
            rewards.append(r)
        return states, rewards


class _DagEpisode(Episode):
    def __init__(self, env: NestedDag):
        self.env = env
        self.state = 0
        self.done = False
        self.decisions: list[int] = []
        self.t = 0

    def step(self, action, rng):
        if self.done:
            raise RuntimeError("episode already finished")
        env = self.env
        D, P = env.depth, env.reveal_padding
        reward = 0.0
        if self.t < D:
            bit = int(action)
            if bit not in (0, 1):
                raise ValueError(f"invalid action {action} at decision state")
            self.decisions.append(bit)
            if self.t + 1 < D:
                nxt = env.decision_state(self.t + 1, bit)
            else:
                nxt = env.filler_state(0, 0) if P else env.reveal_state(0, self.decisions[D - 1])
        else:
            k = env.reveal_step_of(self.state)
            if env.is_reveal(self.state):
                k, offset = k + 1, 0
            else:
                offset = (self.state - env.num_phase1) % (P + 2) + 1
            if offset < P:
                nxt = env.filler_state(k, offset)
            else:
                nxt = env.reveal_state(k, self.decisions[env.matched_decision_step(k)])
        if env.is_reveal(nxt):
            k = env.reveal_step_of(nxt)
            reward = env.reveal_reward(k, self.decisions[env.matched_decision_step(k)])
            self.done = k == D - 1
        self.t += 1
        self.state = nxt
        return nxt, reward, self.done


def dag_make(D: int, seed: int = 0, reveal_padding: int = 0) -> NestedDag:
    if D < 1:
        raise ValueError(f"DAG depth must be >= 1, got {D}")
    bits = stream(seed, "dag-target-bits").integers(0, 2, size=D)
    return NestedDag(depth=D, target_bits=tuple(int(b) for b in bits),
                     reveal_padding=reveal_padding)


def dag_optimal_values(env: NestedDag) -> np.ndarray:
    """Best achievable return-to-go from each state (gamma = 1).

    Each state is scored by the best complete decision sequence passing
    through it: decisions it does not encode are set to their targets.
    """
    values = np.zeros(env.num_states)
    target = list(env.target_bits)
    for s in range(env.num_states):
        decisions = list(target)
        step = env.phase1_step(s)
        if step >= 1:
            decisions[step - 1] = (s - 1) % 2
        elif env.is_reveal(s):
            k = env.reveal_step_of(s)
            decisions[env.matched_decision_step(k)] = (s - env.num_phase1) % (env.reveal_padding + 2) - env.reveal_padding
        states, rewards = env.rollout(decisions)
        t = states.index(s)
        values[s] = sum(rewards[t:])
    return values


def dag_mask_values(values, env: NestedDag, mask_depth: int) -> np.ndarray:
    """Zero the values of phase-1 states at steps below ``mask_depth``.

    ``mask_depth == depth`` zeroes the whole table.
    """
    if not 0 <= mask_depth <= env.depth:
        raise ValueError(f"mask depth {mask_depth} outside [0, {env.depth}]")
    out = np.array(values, dtype=np.float64, copy=True)
    if out.shape != (env.num_states,):
        raise ValueError(f"value table has shape {out.shape}, expected ({env.num_states},)")
    if mask_depth == env.depth:
        out[:] = 0.0
        return out
    for s in range(env.num_phase1):
        if env.phase1_step(s) < mask_depth:
            out[s] = 0.0
    return out


# --------------------------------------------------------------------------
# Structural helpers shared by weight construction and reporting

def reachable_pairs(env) -> np.ndarray:
    """Boolean S x S mask: state j can be entered after state i in one episode."""
    if isinstance(env, NestedDag):
        times = env.state_times()
        mask = times[None, :] > times[:, None]
        terminal = [env.reveal_state(env.depth - 1, b) for b in (0, 1)]
        mask[terminal, :] = False
        return mask
    if isinstance(env, UmbrellaChain):
        idx = np.arange(env.num_states)
        mask = idx[None, :] > idx[:, None]
        mask[env.T, :] = False
        return mask
    raise TypeError(f"no reachability rule for {type(env).__name__}")
