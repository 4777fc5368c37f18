"""Method orchestration: fixed baselines, handcrafted and meta-learned weights."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import credit, envs
from ..agent import Estimator
from ..credit import FixedWeights
from ..metaloop import freeze_and_evaluate, online_train, reset_train, train_agent
from ..metrics import RunMetrics
from . import export
from .config import ExperimentConfig

log = logging.getLogger(__name__)

META_METHODS = {"meta_pwr": "pwr", "meta_pwtd": "pwtd"}
SUMMARY_HEADER = ("method", "seed", "episodes_to_threshold", "num_episodes")


def handcrafted_weights(env) -> np.ndarray:
    if isinstance(env, envs.UmbrellaChain):
        return credit.handcrafted_umbrella(env)
    return credit.handcrafted_dag(env)


def value_override_for(cfg: ExperimentConfig, env) -> Optional[np.ndarray]:
    if cfg.mask_depth < 0:
        return None
    return envs.dag_mask_values(envs.dag_optimal_values(env), env, cfg.mask_depth)


def fixed_estimator(cfg: ExperimentConfig, method: str, env) -> Estimator:
    if method == "fixed_lambda":
        return Estimator("lambda", lam=cfg.lam)
    if method == "h_pwr":
        return Estimator("pwr", FixedWeights(handcrafted_weights(env)))
    raise ValueError(f"{method!r} is not a fixed-weight method")


def _eval_kwargs(cfg: ExperimentConfig) -> dict:
    ev = cfg.evaluation
    return dict(max_episodes=ev.max_episodes, fraction=ev.threshold, window=ev.window,
                stop_at_threshold=ev.stop_at_threshold)


def run_fixed(cfg: ExperimentConfig, method: str, env, seed: int) -> RunMetrics:
    return train_agent(env, fixed_estimator(cfg, method, env), cfg.inner, seed, **_eval_kwargs(cfg))


def run_online(cfg: ExperimentConfig, method: str, env, seed: int, callback=None):
    """Online-mode learning for one seed; returns (metrics, weights or None)."""
    if method in META_METHODS:
        if cfg.mask_depth >= 0:
            log.warning("mask_depth is only used by reset training; ignored in online mode")
        metrics, state, _ = online_train(env, META_METHODS[method], cfg.inner, cfg.meta, seed,
                                         snapshot_every=cfg.snapshot_every, callback=callback,
                                         **_eval_kwargs(cfg))
        return metrics, state.weights.weights
    return run_fixed(cfg, method, env, seed), None


def meta_train_weights(cfg: ExperimentConfig, method: str, env, seed: int, callback=None):
    """Reset-mode training; returns (weights, records, snapshots)."""
    state, records, snapshots = reset_train(env, META_METHODS[method], cfg.inner, cfg.meta, seed,
                                            value_override_for(cfg, env),
                                            snapshot_every=cfg.snapshot_every, callback=callback)
    return state.weights.weights, records, snapshots


def evaluate_weights(cfg: ExperimentConfig, weights: np.ndarray, env, seed: int,
                     kind: str = "pwr") -> RunMetrics:
    return freeze_and_evaluate(weights, env, cfg.inner, seed, kind=kind, **_eval_kwargs(cfg))


@dataclass
class SuiteResult:
    episodes: dict[tuple[str, int], Optional[int]] = field(default_factory=dict)
    num_episodes: dict[tuple[str, int], int] = field(default_factory=dict)
    curves: dict[tuple[str, int], list[float]] = field(default_factory=dict)
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return sorted({m for m, _ in self.episodes})

    def per_seed(self, method: str) -> list[Optional[int]]:
        return [v for (m, _), v in sorted(self.episodes.items()) if m == method]

    def median(self, method: str) -> float:
        """Median episodes-to-threshold; runs that never reach it count as inf."""
        vals = [np.inf if v is None else v for v in self.per_seed(method)]
        return float(np.median(vals))

    def summary_rows(self):
        for (m, s) in sorted(self.episodes):
            e = self.episodes[(m, s)]
            yield (m, s, "" if e is None else e, self.num_episodes[(m, s)])
        for m in self.methods:
            med = self.median(m)
            yield (m, "median", "inf" if np.isinf(med) else repr(med), "")


def run_suite(cfg: ExperimentConfig, out: Optional[str] = None) -> SuiteResult:
    """Run every configured method on every seed with frozen weights.

    Meta methods first reset-train one weight table (on the first seed) and
    evaluate it frozen on all seeds.  Evaluation runs share per-seed streams
    across methods, so comparisons are paired.  With ``out`` set, writes
    ``summary.csv`` and ``curves.csv`` there.
    """
    env = cfg.environment.build()
    result = SuiteResult()
    for method in cfg.methods:
        if method in META_METHODS:
            w, _, _ = meta_train_weights(cfg, method, env, cfg.seeds[0])
            result.weights[method] = w
        for seed in cfg.seeds:
            if method in META_METHODS:
                metrics = evaluate_weights(cfg, result.weights[method], env, seed)
            else:
                metrics = run_fixed(cfg, method, env, seed)
            result.episodes[(method, seed)] = metrics.episodes_to_threshold
            result.num_episodes[(method, seed)] = metrics.num_episodes
            result.curves[(method, seed)] = metrics.returns
            log.info("%s seed %d: %s episodes to threshold (%.1fs)", method, seed,
                     metrics.episodes_to_threshold, metrics.wall_clock)
    if out is not None:
        write_suite(result, out)
    return result


def write_suite(result: SuiteResult, out) -> None:
    out = Path(out)
    export.write_table_csv(out / "summary.csv", SUMMARY_HEADER, result.summary_rows())
    export.write_curves_csv(out / "curves.csv",
                            ((m, s, r) for (m, s), r in sorted(result.curves.items())))
