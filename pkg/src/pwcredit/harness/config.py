"""Experiment configuration files (TOML).

Grammar: a TOML document with the sections below; every key is optional and
falls back to the default shown in :data:`SCHEMA`.  Unknown sections or keys,
and values of the wrong type, are errors reported with their line number.

.. code-block:: toml

    [environment]
    kind = "nested_dag"      # or "umbrella"
    depth = 8
    seed = 0                 # selects the DAG's target bits
    reveal_padding = 0

    [method]
    name = "meta_pwr"        # fixed_lambda | h_pwr | meta_pwr | meta_pwtd
    lam = 1.0                # used by fixed_lambda

    [inner]
    optimizer = "adam"
    lr = 0.01
    batch_size = 8

    [meta]
    mode = "reset"
    inner_updates = 16
    outer_updates = 2000
    clip_norm = 0.5
    mask_depth = -1          # >= 0: use the masked optimal values for PWTD

    [evaluation]
    max_episodes = 40000
    threshold = 0.95
    window = 100

    [run]
    seeds = [0, 1, 2, 3, 4]
    out = "results"
    snapshot_every = 0

    [suite]
    methods = ["fixed_lambda", "h_pwr"]
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..agent import InnerConfig
from ..envs import dag_make, umbrella_make
from ..metaloop import MetaConfig

METHODS = ("fixed_lambda", "h_pwr", "meta_pwr", "meta_pwtd")


class ConfigError(Exception):
    pass


# section -> key -> (type(s), default)
SCHEMA: dict[str, dict[str, tuple[tuple[type, ...], Any]]] = {
    "environment": {
        "kind": ((str,), "nested_dag"),
        "depth": ((int,), 8),
        "seed": ((int,), 0),
        "reveal_padding": ((int,), 0),
        "T": ((int,), 20),
        "noise_mean": ((int, float), 0.0),
        "noise_std": ((int, float), 1.0),
        "final_reward": ((int, float), 1.0),
        "target_action": ((int,), 0),
        "noise": ((str,), "gaussian"),
    },
    "method": {
        "name": ((str,), "h_pwr"),
        "lam": ((int, float), 1.0),
    },
    "inner": {
        "optimizer": ((str,), "adam"),
        "lr": ((int, float), 0.01),
        "beta1": ((int, float), 0.0),
        "beta2": ((int, float), 0.999),
        "eps": ((int, float), 1e-8),
        "batch_size": ((int,), 8),
        "gamma": ((int, float), 1.0),
        "entropy_coef": ((int, float), 0.001),
        "standardize": ((bool,), False),
    },
    "meta": {
        "mode": ((str,), "reset"),
        "inner_updates": ((int,), 16),
        "outer_updates": ((int,), 2000),
        "outer_optimizer": ((str,), "adam"),
        "outer_lr": ((int, float), 0.01),
        "outer_beta1": ((int, float), 0.0),
        "outer_beta2": ((int, float), 0.999),
        "outer_eps": ((int, float), 1e-8),
        "outer_lam": ((int, float), 1.0),
        "clip_norm": ((int, float), 0.5),
        "mask_depth": ((int,), -1),
    },
    "evaluation": {
        "max_episodes": ((int,), 40000),
        "threshold": ((int, float), 0.95),
        "window": ((int,), 100),
        "stop_at_threshold": ((bool,), True),
    },
    "run": {
        "seeds": ((list,), [0]),
        "out": ((str,), "results"),
        "snapshot_every": ((int,), 0),
    },
    "suite": {
        "methods": ((list,), []),
    },
}


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "nested_dag"
    depth: int = 8
    seed: int = 0
    reveal_padding: int = 0
    T: int = 20
    noise_mean: float = 0.0
    noise_std: float = 1.0
    final_reward: float = 1.0
    target_action: int = 0
    noise: str = "gaussian"

    def build(self):
        if self.kind == "nested_dag":
            return dag_make(self.depth, seed=self.seed, reveal_padding=self.reveal_padding)
        return umbrella_make(self.T, self.noise_mean, self.noise_std, self.target_action,
                             final_reward_magnitude=self.final_reward, noise=self.noise)


@dataclass(frozen=True)
class EvaluationSpec:
    max_episodes: int = 40000
    threshold: float = 0.95
    window: int = 100
    stop_at_threshold: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    method: str = "h_pwr"
    lam: float = 1.0
    inner: InnerConfig = field(default_factory=InnerConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    mask_depth: int = -1
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    seeds: tuple[int, ...] = (0,)
    out: str = "results"
    snapshot_every: int = 0
    suite_methods: tuple[str, ...] = ()

    @property
    def methods(self) -> tuple[str, ...]:
        return self.suite_methods or (self.method,)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       method: Optional[str] = None,
                       snapshot_every: Optional[int] = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(int(seed),))
        if out is not None:
            cfg = replace(cfg, out=str(out))
        if method is not None:
            if method not in METHODS:
                raise ConfigError(f"--method: unknown method {method!r}; expected one of {METHODS}")
            cfg = replace(cfg, method=method, suite_methods=())
        if snapshot_every is not None:
            if snapshot_every < 0:
                raise ConfigError("--snapshot-every must be >= 0")
            cfg = replace(cfg, snapshot_every=int(snapshot_every))
        return cfg


def _locate(text: str, section: Optional[str], key: Optional[str] = None) -> int:
    """1-based line of ``[section]`` (or of ``key`` inside it); 0 if not found."""
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", stripped)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^\"?{re.escape(key)}\"?\s*=", stripped):
            return no
    return 0


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    def fail(msg, section=None, key=None):
        line = _locate(text, section, key) if section else 0
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {msg}")

    values: dict[str, dict[str, Any]] = {}
    for section, body in raw.items():
        if section not in SCHEMA:
            fail(f"unknown section [{section}]", section)
        if not isinstance(body, dict):
            fail(f"'{section}' must be a section", section)
        for key, value in body.items():
            if key not in SCHEMA[section]:
                fail(f"unknown key '{key}' in [{section}]", section, key)
            types, _ = SCHEMA[section][key]
            if isinstance(value, bool) and bool not in types:
                fail(f"'{key}' must be {types[0].__name__}, got bool", section, key)
            if not isinstance(value, types):
                fail(f"'{key}' must be {types[0].__name__}, got {type(value).__name__}",
                     section, key)
        values[section] = body

    def get(section, key):
        return values.get(section, {}).get(key, SCHEMA[section][key][1])

    def section_kwargs(section, exclude=()):
        return {k: get(section, k) for k in SCHEMA[section] if k not in exclude}

    env_kw = section_kwargs("environment")
    if env_kw["kind"] not in ("nested_dag", "umbrella"):
        fail(f"unknown environment kind {env_kw['kind']!r}", "environment", "kind")
    method = get("method", "name")
    if method not in METHODS:
        fail(f"unknown method {method!r}; expected one of {METHODS}", "method", "name")
    seeds = get("run", "seeds")
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        fail("'seeds' must be a non-empty list of integers", "run", "seeds")
    methods = get("suite", "methods")
    for m in methods:
        if m not in METHODS:
            fail(f"unknown suite method {m!r}", "suite", "methods")

    try:
        env_spec = EnvironmentSpec(**{k: (float(v) if k in ("noise_mean", "noise_std", "final_reward") else v)
                                      for k, v in env_kw.items()})
        env_spec.build()
    except ValueError as exc:
        fail(str(exc), "environment")
    try:
        inner = InnerConfig(**{k: (float(v) if isinstance(v, int) and not isinstance(v, bool)
                                   and k not in ("batch_size",) else v)
                               for k, v in section_kwargs("inner").items()})
    except ValueError as exc:
        fail(str(exc), "inner")
    try:
        meta = MetaConfig(**section_kwargs("meta", exclude=("mask_depth",)))
    except ValueError as exc:
        fail(str(exc), "meta")
    mask_depth = get("meta", "mask_depth")
    if mask_depth >= 0 and (env_spec.kind != "nested_dag" or mask_depth > env_spec.depth):
        fail(f"mask_depth {mask_depth} is invalid for this environment", "meta", "mask_depth")
    try:
        evaluation = EvaluationSpec(**section_kwargs("evaluation"))
        if not 0 < evaluation.threshold <= 1 or evaluation.window < 1 or evaluation.max_episodes < 1:
            raise ValueError("threshold must lie in (0, 1]; window and max_episodes must be >= 1")
    except ValueError as exc:
        fail(str(exc), "evaluation")
    if get("run", "snapshot_every") < 0:
        fail("'snapshot_every' must be >= 0", "run", "snapshot_every")
    return ExperimentConfig(environment=env_spec, method=method, lam=float(get("method", "lam")),
                            inner=inner, meta=meta, mask_depth=mask_depth, evaluation=evaluation,
                            seeds=tuple(seeds), out=get("run", "out"),
                            snapshot_every=get("run", "snapshot_every"),
                            suite_methods=tuple(methods))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, source=str(path))
