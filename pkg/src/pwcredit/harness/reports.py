"""Variance and gradient-check reports."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import credit
from ..agent import sample_batch
from ..envs import UmbrellaChain
from ..gradcheck import check_metagradient, run_op_suite
from ..rng import Streams

OP_TOLERANCE = 1e-6
META_TOLERANCE = 1e-4


@dataclass(frozen=True)
class ActionStats:
    action: int
    count: int
    mean_pwr: float
    var_pwr: float
    mean_mc: float
    var_mc: float

    @property
    def mean_gap_se(self) -> float:
        """|mean_mc - mean_pwr| in units of its standard error."""
        se = np.sqrt((self.var_mc + self.var_pwr) / self.count)
        return float(abs(self.mean_mc - self.mean_pwr) / se) if se > 0 else 0.0


@dataclass(frozen=True)
class UmbrellaReport:
    T: int
    noise_std: float
    episodes: int
    expected_mc_variance: float
    actions: tuple[ActionStats, ...]

    def rows(self):
        for a in self.actions:
            yield (a.action, a.count, a.mean_pwr, a.var_pwr, a.mean_mc, a.var_mc,
                   self.expected_mc_variance, a.mean_gap_se)

    HEADER = ("action", "count", "mean_pwr", "var_pwr", "mean_mc", "var_mc",
              "expected_var_mc", "mean_gap_se")


def umbrella_exact_values(env: UmbrellaChain, p_target: float = 0.5):
    """Exact value tables under a policy choosing the target action w.p. ``p_target``.

    Returns (v for the regular return, v for the handcrafted pairwise return).
    """
    final = env.final_reward_magnitude * (2 * p_target - 1)
    v = np.zeros(env.num_states)
    for t in range(env.T):
        v[t] = (env.T - 1 - t) * env.noise_mean + final
    v_pwr = np.zeros(env.num_states)
    v_pwr[0] = final
    return v, v_pwr


def umbrella_variance_report(env: UmbrellaChain, episodes: int = 10_000, seed: int = 0,
                             chunk: int = 1000) -> UmbrellaReport:
    """Spread of the two advantage estimates at the first state, per action.

    The behaviour policy is uniform at the first state; both estimators use
    exact value tables, the pairwise one with the handcrafted weights.
    """
    if episodes < 2:
        raise ValueError("need at least two episodes")
    probs = np.zeros((env.num_states, 2))
    probs[:, 0] = 1.0
    probs[0] = 0.5
    v, v_pwr = umbrella_exact_values(env, 0.5)
    w = credit.handcrafted_umbrella(env)
    streams = Streams(seed, "umbrella-demo")
    a0, adv_pwr, adv_mc = [], [], []
    done = 0
    while done < episodes:
        n = min(chunk, episodes - done)
        for tr in sample_batch(probs, env, n, streams.policy, streams.env):
            a0.append(tr.actions[0])
            adv_mc.append(credit.mc_advantages(tr, v)[0])
            adv_pwr.append(credit.pwr_return_and_advantages(tr, v_pwr, w)[1][0])
        done += n
    a0, adv_pwr, adv_mc = map(np.asarray, (a0, adv_pwr, adv_mc))
    stats = []
    for a in (0, 1):
        sel = a0 == a
        stats.append(ActionStats(a, int(sel.sum()), float(adv_pwr[sel].mean()),
                                 float(adv_pwr[sel].var(ddof=1)), float(adv_mc[sel].mean()),
                                 float(adv_mc[sel].var(ddof=1))))
    expected = (env.T - 1) * env.noise_std ** 2
    return UmbrellaReport(env.T, env.noise_std, episodes, expected, tuple(stats))


GRADCHECK_HEADER = ("suite", "name", "trials", "max_rel_error", "tolerance", "passed")


def gradcheck_report(trials: int = 100, seed: int = 0, inner_updates=(1, 2, 4)) -> list[tuple]:
    rows = []
    for r in run_op_suite(trials, seed):
        rows.append(("op", r.name, r.trials, r.max_rel_error, OP_TOLERANCE,
                     r.max_rel_error < OP_TOLERANCE))
    for kind in ("pwr", "pwtd"):
        for K in inner_updates:
            err = check_metagradient(K, seed=seed, kind=kind)
            rows.append(("metagradient", f"{kind}_K{K}", 1, err, META_TOLERANCE,
                         err < META_TOLERANCE))
    return rows
