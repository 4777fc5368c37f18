"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 runtime abort
(non-finite values, failed gradient checks).
"""
from __future__ import annotations

import functools
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .. import diffmath as dm
from .. import envs
from . import export, reports, suite
from .config import ConfigError, EnvironmentSpec, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("pwcredit")


class RuntimeAbort(Exception):
    pass


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False),
                  help="TOML experiment config; defaults are used when omitted.")
    @click.option("--seed", type=int, default=None, help="Run only this seed.")
    @click.option("--out", type=click.Path(file_okay=False), default=None,
                  help="Output directory (overrides [run].out).")
    @click.option("--method", default=None,
                  help="fixed_lambda | h_pwr | meta_pwr | meta_pwtd (overrides [method].name).")
    @click.option("--snapshot-every", type=int, default=None,
                  help="Write weight snapshots every K outer updates.")
    @functools.wraps(fn)
    def wrapper(config_path, seed, out, method, snapshot_every, **kwargs):
        cfg = load_config(config_path) if config_path else ExperimentConfig()
        cfg = cfg.with_overrides(seed=seed, out=out, method=method, snapshot_every=snapshot_every)
        return fn(cfg, **kwargs)
    return wrapper


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _save_weights(out: Path, stem: str, weights: np.ndarray, env) -> None:
    export.write_matrix_csv(out / f"{stem}.csv", weights)
    export.write_heatmap(out / f"{stem}.svg", weights, envs.reachable_pairs(env), title=stem)


def _write_runs(out: Path, runs: dict, max_episodes: dict, ep: dict) -> None:
    result = suite.SuiteResult(episodes=ep, num_episodes=max_episodes, curves=runs)
    suite.write_suite(result, out)
    export.write_curves_svg(out / "curves.svg",
                            {f"{m} seed {s}": r for (m, s), r in sorted(runs.items())})
    for m in result.methods:
        click.echo(f"{m}: median episodes to threshold {result.median(m)} "
                   f"(per seed {result.per_seed(m)})")


class _LastGood:
    """Keeps the most recent finite weight table for abort reporting."""

    def __init__(self):
        self.weights: Optional[np.ndarray] = None
        self.step = 0

    def __call__(self, step, state, record):
        w = state.weights.weights
        if np.all(np.isfinite(w)):
            self.weights, self.step = w, step

    def dump(self, out: Path, env, stem: str) -> None:
        if self.weights is not None:
            _save_weights(out, stem, self.weights, env)
            click.echo(f"last good weights (outer step {self.step}) written to {out / stem}.csv",
                       err=True)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Pairwise-weighted credit assignment experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@common_options
def train(cfg: ExperimentConfig):
    """Online-mode learning for each seed."""
    env = cfg.environment.build()
    out = _out(cfg)
    runs, n_eps, ep = {}, {}, {}
    for seed in cfg.seeds:
        last = _LastGood()
        try:
            metrics, w = suite.run_online(cfg, cfg.method, env, seed, callback=last)
        except (FloatingPointError, dm.DomainError) as exc:
            last.dump(out, env, f"weights_last_good_seed{seed}")
            raise RuntimeAbort(f"seed {seed}: {exc}") from None
        runs[(cfg.method, seed)] = metrics.returns
        n_eps[(cfg.method, seed)] = metrics.num_episodes
        ep[(cfg.method, seed)] = metrics.episodes_to_threshold
        if w is not None:
            _save_weights(out, f"weights_seed{seed}", w, env)
            for step, snap in sorted(metrics.weight_snapshots.items()):
                _save_weights(out / "snapshots", f"weights_seed{seed}_step{step}", snap, env)
    _write_runs(out, runs, n_eps, ep)


@cli.command("reset-train")
@common_options
@click.option("--skip-eval", is_flag=True, help="Only learn the weights.")
def reset_train_cmd(cfg: ExperimentConfig, skip_eval: bool):
    """Reset-mode weight learning, then frozen evaluation on every seed.

    Weights are learned with the first seed.
    """
    if cfg.method not in suite.META_METHODS:
        raise ConfigError(f"reset-train needs a meta method (meta_pwr or meta_pwtd), got {cfg.method!r}")
    env = cfg.environment.build()
    out = _out(cfg)
    last = _LastGood()

    def progress(n, state, rec):
        last(n, state, rec)
        if (n + 1) % 100 == 0:
            log.info("outer step %d objective %.4f grad norm %.4f", n + 1, rec.objective, rec.grad_norm)

    try:
        w, records, snapshots = suite.meta_train_weights(cfg, cfg.method, env, cfg.seeds[0],
                                                         callback=progress)
    except (FloatingPointError, dm.DomainError) as exc:
        last.dump(out, env, "weights_last_good")
        raise RuntimeAbort(str(exc)) from None
    _save_weights(out, "weights", w, env)
    export.write_table_csv(out / "outer_log.csv",
                           ("step", "objective", "grad_norm", "clipped_norm"),
                           ((r.step, r.objective, r.grad_norm, r.clipped_norm) for r in records))
    for step, snap in sorted(snapshots.items()):
        _save_weights(out / "snapshots", f"weights_step{step}", snap, env)
    click.echo(f"weights written to {out / 'weights.csv'}")
    if not skip_eval:
        _evaluate(cfg, env, w, cfg.method, out)


def _evaluate(cfg, env, weights, label, out, kind="pwr"):
    runs, n_eps, ep = {}, {}, {}
    for seed in cfg.seeds:
        m = suite.evaluate_weights(cfg, weights, env, seed, kind=kind)
        runs[(label, seed)] = m.returns
        n_eps[(label, seed)] = m.num_episodes
        ep[(label, seed)] = m.episodes_to_threshold
    _write_runs(out, runs, n_eps, ep)


@cli.command("eval-weights")
@common_options
@click.option("--weights", "weights_path", required=True, type=click.Path(dir_okay=False),
              help="Weight matrix CSV (header row of state ids).")
@click.option("--kind", type=click.Choice(["pwr", "pwtd"]), default="pwr", show_default=True)
def eval_weights(cfg: ExperimentConfig, weights_path: str, kind: str):
    """Train fresh agents with a fixed weight table."""
    env = cfg.environment.build()
    w = _read_matrix(weights_path)
    if w.shape != (env.num_states, env.num_states):
        raise ConfigError(f"{weights_path}: weights have shape {w.shape}, environment has "
                          f"{env.num_states} states")
    _evaluate(cfg, env, w, f"frozen_{kind}", _out(cfg), kind)


@cli.command("umbrella-demo")
@common_options
@click.option("--T", "T", type=int, default=None, help="Chain length (default 20).")
@click.option("--noise-std", type=float, default=None, help="Noise standard deviation (default 5).")
@click.option("--episodes", type=int, default=10_000, show_default=True)
def umbrella_demo(cfg: ExperimentConfig, T, noise_std, episodes):
    """Variance of pairwise-return vs Monte Carlo advantages at the first state."""
    spec = cfg.environment
    if spec.kind != "umbrella":
        spec = EnvironmentSpec(kind="umbrella", noise_std=5.0)
    spec = replace(spec, T=spec.T if T is None else T,
                   noise_std=spec.noise_std if noise_std is None else noise_std)
    try:
        env = spec.build()
        report = reports.umbrella_variance_report(env, episodes, seed=cfg.seeds[0])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out(cfg)
    export.write_table_csv(out / "umbrella_report.csv", reports.UmbrellaReport.HEADER, report.rows())
    click.echo(f"T={T} noise_std={noise_std} episodes={episodes} "
               f"expected MC variance {report.expected_mc_variance:g}")
    for a in report.actions:
        click.echo(f"a0={a.action} n={a.count}  PWR mean {a.mean_pwr:+.4f} var {a.var_pwr:.3g}  "
                   f"MC mean {a.mean_mc:+.4f} var {a.var_mc:.4g}  gap {a.mean_gap_se:.2f} SE")


@cli.command()
@common_options
@click.option("--trials", type=int, default=100, show_default=True)
def gradcheck(cfg: ExperimentConfig, trials: int):
    """Finite-difference checks of every op and of the metagradient."""
    rows = reports.gradcheck_report(trials=trials, seed=cfg.seeds[0])
    if cfg.out:
        export.write_table_csv(_out(cfg) / "gradcheck.csv", reports.GRADCHECK_HEADER, rows)
    for suite_name, name, n, err, tol, ok in rows:
        click.echo(f"{'ok  ' if ok else 'FAIL'} {suite_name:13s} {name:18s} {err:.2e} (tol {tol:g})")
    worst = max(r[3] for r in rows)
    click.echo(f"max relative error {worst:.2e}")
    if not all(r[5] for r in rows):
        raise RuntimeAbort("gradient check failed")


@cli.command("export")
@click.argument("paths", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="Config whose environment supplies the reachability mask.")
@click.option("--mask", "mask_path", type=click.Path(dir_okay=False),
              help="0/1 matrix CSV marking reachable pairs.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for the SVGs (default: next to each input).")
def export_cmd(paths, config_path, mask_path, out):
    """Render weight-matrix CSVs as heatmaps and learning-curve CSVs as line charts."""
    mask = None
    if mask_path:
        mask = _read_matrix(mask_path) > 0.5
    elif config_path:
        mask = envs.reachable_pairs(load_config(config_path).environment.build())
    for p in map(Path, paths):
        if not p.is_file():
            raise ConfigError(f"{p}: no such file")
        dest = (Path(out) if out else p.parent) / (p.stem + ".svg")
        with open(p, encoding="utf-8") as f:
            header = f.readline().strip().split(",")
        if tuple(header) == export.CURVE_HEADER:
            series = {f"{m} seed {s}": r for (m, s), r in sorted(export.read_curves_csv(p).items())}
            export.write_curves_svg(dest, series, title=p.stem)
        else:
            w = _read_matrix(p)
            if mask is not None and mask.shape != w.shape:
                raise ConfigError(f"{p}: mask shape {mask.shape} does not match {w.shape}")
            export.write_heatmap(dest, w, mask, title=p.stem)
        click.echo(f"wrote {dest}")


def _read_matrix(path) -> np.ndarray:
    if not Path(path).is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        return export.read_matrix_csv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="pwcredit", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except (RuntimeAbort, FloatingPointError, dm.DomainError) as exc:
        click.echo(f"runtime abort: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
