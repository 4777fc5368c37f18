"""Trajectory records and the flattened index used for batch computations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Trajectory:
    """One complete episode.

    ``states`` has length T+1 (the last entry is the terminal state);
    ``rewards[t]`` is R_{t+1}, obtained on the transition out of ``states[t]``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray

    def __post_init__(self):
        T = len(self.actions)
        if len(self.states) != T + 1 or len(self.rewards) != T or len(self.log_probs) != T:
            raise ValueError(
                f"inconsistent trajectory lengths: states={len(self.states)}, "
                f"actions={T}, rewards={len(self.rewards)}, log_probs={len(self.log_probs)}")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))

    @classmethod
    def from_lists(cls, states, actions, rewards, log_probs=None) -> "Trajectory":
        actions = np.asarray(actions, dtype=np.intp)
        if log_probs is None:
            log_probs = np.zeros(len(actions))
        return cls(np.asarray(states, dtype=np.intp), actions,
                   np.asarray(rewards, dtype=np.float64), np.asarray(log_probs, dtype=np.float64))


class BatchIndex:
    """Flattened (trajectory, time) steps of a batch plus the pair grid.

    Rows are the N = sum(T_b) decision steps.  Column c of the pair grid
    stands for the later time t' = c + 1 of the same trajectory; entries
    with t' <= t or t' > T_b are masked out by ``causal``.
    """

    def __init__(self, batch: list[Trajectory]):
        if not batch:
            raise ValueError("empty batch")
        self.batch = batch
        self.lengths = np.array([len(tr) for tr in batch])
        self.size = len(batch)
        T = int(self.lengths.max())
        self.horizon = T
        N = int(self.lengths.sum())
        self.num_steps = N
        self.step_traj = np.repeat(np.arange(self.size), self.lengths)
        self.step_time = np.concatenate([np.arange(n) for n in self.lengths])
        self.step_states = np.concatenate([tr.states[:-1] for tr in batch])
        self.step_actions = np.concatenate([tr.actions for tr in batch])
        self.step_rewards = np.concatenate([tr.rewards for tr in batch])

        # per-trajectory padded arrays (B x T): entered states and rewards at t' = c+1
        nxt = np.zeros((self.size, T), dtype=np.intp)
        rew = np.zeros((self.size, T))
        prev = np.zeros((self.size, T), dtype=np.intp)
        valid = np.zeros((self.size, T), dtype=bool)
        for b, tr in enumerate(batch):
            n = len(tr)
            nxt[b, :n] = tr.states[1:]
            prev[b, :n] = tr.states[:-1]
            rew[b, :n] = tr.rewards
            valid[b, :n] = True
        self.next_states = nxt
        self.prev_states = prev
        self.rewards = rew
        self.valid = valid
        self.terminal = np.zeros((self.size, T), dtype=bool)
        self.terminal[np.arange(self.size), self.lengths - 1] = True

        cols = np.arange(T)[None, :] + 1
        t = self.step_time[:, None]
        self.dt = cols - t
        self.causal = (cols > t) & valid[self.step_traj]
        self.col_states = nxt[self.step_traj]
        self.row_states = np.broadcast_to(self.step_states[:, None], self.col_states.shape)

    def per_step(self, per_traj: np.ndarray) -> np.ndarray:
        """Spread a (B, T) array onto the (N, T) pair grid."""
        return per_traj[self.step_traj]
