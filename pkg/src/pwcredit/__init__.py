"""Pairwise-weighted credit assignment for tabular policy-gradient agents.

Modules: ``diffmath`` (reverse-mode tape), ``envs`` (umbrella chain, nested
DAG), ``credit`` (advantage estimators and weight tables), ``agent`` (tabular
actor-critic inner loop), ``metaloop`` (metagradient outer loop) and
``harness`` (configs, CLI, export).
"""
from .agent import Estimator, InnerConfig, TabularActorCritic, agent_init, inner_step, sample_batch
from .credit import (FixedWeights, PairwiseWeightTable, handcrafted_dag, handcrafted_umbrella,
                     weights_init)
from .envs import NestedDag, UmbrellaChain, dag_make, umbrella_make
from .metaloop import (MetaConfig, freeze_and_evaluate, online_meta_step, online_train,
                       reset_meta_step, reset_train, train_agent)
from .metrics import RunMetrics, episodes_to_threshold
from .trajectory import Trajectory

__version__ = "0.1.0"

__all__ = [
    "Estimator", "FixedWeights", "InnerConfig", "MetaConfig", "NestedDag", "PairwiseWeightTable",
    "RunMetrics", "TabularActorCritic", "Trajectory", "UmbrellaChain", "agent_init", "dag_make",
    "episodes_to_threshold", "freeze_and_evaluate", "handcrafted_dag", "handcrafted_umbrella",
    "inner_step", "online_meta_step", "online_train", "reset_meta_step", "reset_train",
    "sample_batch", "train_agent", "umbrella_make", "weights_init",
]
