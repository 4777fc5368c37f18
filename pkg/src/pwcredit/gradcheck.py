"""Central finite-difference checks for the tape and the metagradient."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffmath as dm

FD_STEP = 1e-5


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x)
        x[idx] = orig - step
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


# --------------------------------------------------------------------------
# Per-op suite

def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _any(rng, shape):
    return rng.normal(size=shape)


# name -> (input generators, function of DiffValues)
OP_CASES: dict[str, tuple] = {
    "add": ((_any, _any), lambda a, b: a + b),
    "sub": ((_any, _any), lambda a, b: a - b),
    "mul": ((_any, _any), lambda a, b: a * b),
    "div": ((_any, _pos), lambda a, b: a / b),
    "neg": ((_any,), lambda a: -a),
    "scalar_add": ((_any,), lambda a: 1.5 + a),
    "scalar_mul": ((_any,), lambda a: a * -2.5),
    "scalar_rdiv": ((_pos,), lambda a: 3.0 / a),
    "log": ((_pos,), dm.log),
    "exp": ((_any,), dm.exp),
    "sqrt": ((_pos,), dm.sqrt),
    "square": ((_any,), dm.square),
    "power": ((_pos,), lambda a: dm.power(a, 1.7)),
    "sigmoid": ((_any,), dm.sigmoid),
    "softmax_rows": ((_any,), dm.softmax_rows),
    "log_softmax_rows": ((_any,), dm.log_softmax_rows),
    "sum": ((_any,), dm.total),
    "mean": ((_any,), dm.mean),
    "sum_rows": ((_any,), dm.sum_rows),
    "sum_cols": ((_any,), dm.sum_cols),
    "transpose": ((_any,), dm.transpose),
    "dot": ((_any, _any), dm.dot),
}


@dataclass
class CheckResult:
    name: str
    trials: int
    max_rel_error: float


def _check_case(name, gens, fn, rng, shape) -> float:
    inputs = [g(rng, shape) for g in gens]
    worst = 0.0
    tape = dm.Tape()
    params = [tape.param(x) for x in inputs]
    out = fn(*params)
    proj = rng.normal(size=out.shape)
    obj = dm.dot(out, proj)
    grads = tape.backward(obj)
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            t = dm.Tape()
            args = [t.constant(xi if j == i else inputs[j]) for j in range(len(inputs))]
            return float((fn(*args).value * proj).sum())
        worst = max(worst, relative_error(grads[params[i].id], numerical_gradient(f, x)))
    return worst


def _check_structural(name: str, rng) -> float:
    """Ops whose inputs carry non-array arguments."""
    if name == "matmul":
        n, k, m = rng.integers(1, 5, size=3)
        a, b = _any(rng, (n, k)), _any(rng, (k, m))
        proj = rng.normal(size=(n, m))
        tape = dm.Tape()
        pa, pb = tape.param(a), tape.param(b)
        g = tape.backward(dm.dot(pa @ pb, proj))
        fa = numerical_gradient(lambda x: float(((x @ b) * proj).sum()), a)
        fb = numerical_gradient(lambda x: float(((a @ x) * proj).sum()), b)
        return max(relative_error(g[pa.id], fa), relative_error(g[pb.id], fb))
    if name == "take":
        n, m = rng.integers(1, 6, size=2)
        a = _any(rng, (n, m))
        rows = rng.integers(0, n, size=(4, 3))
        cols = rng.integers(0, m, size=(4, 3))
        proj = rng.normal(size=(4, 3))
        tape = dm.Tape()
        pa = tape.param(a)
        g = tape.backward(dm.dot(dm.take(pa, rows, cols), proj))
        fa = numerical_gradient(lambda x: float((x[rows, cols] * proj).sum()), a)
        return relative_error(g[pa.id], fa)
    if name == "expand":
        n, m = rng.integers(1, 6, size=2)
        src = [(n, 1), (1, m), (1, 1)][int(rng.integers(0, 3))]
        a = _any(rng, src)
        proj = rng.normal(size=(n, m))
        tape = dm.Tape()
        pa = tape.param(a)
        g = tape.backward(dm.dot(dm.expand(pa, (n, m)), proj))
        fa = numerical_gradient(lambda x: float((np.broadcast_to(x, (n, m)) * proj).sum()), a)
        return relative_error(g[pa.id], fa)
    raise KeyError(name)


STRUCTURAL_OPS = ("matmul", "take", "expand")


def run_op_suite(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (gens, fn) in OP_CASES.items():
        worst = 0.0
        for _ in range(trials):
            shape = tuple(int(s) for s in rng.integers(1, 5, size=2))
            worst = max(worst, _check_case(name, gens, fn, rng, shape))
        results.append(CheckResult(name, trials, worst))
    for name in STRUCTURAL_OPS:
        worst = max(_check_structural(name, rng) for _ in range(trials))
        results.append(CheckResult(name, trials, worst))
    return results


# --------------------------------------------------------------------------
# Metagradient through K inner updates

def check_metagradient(inner_updates: int, seed: int = 0, kind: str = "pwr", depth: int = 3,
                       num_coords: int = 12, lr: float = 0.5) -> float:
    """Tape vs central-difference eta-gradient of the reset-mode objective.

    Trajectories are sampled once and replayed for every evaluation; the
    inner optimizer is SGD.  The largest-magnitude coordinates plus a few
    random ones are checked.
    """
    from .agent import InnerConfig
    from .envs import dag_make
    from .metaloop import MetaConfig, reset_unroll
    from .rng import Streams

    env = dag_make(depth, seed=seed)
    inner = InnerConfig(optimizer="sgd", lr=lr, batch_size=4)
    meta = MetaConfig(inner_updates=inner_updates)
    rng = np.random.default_rng(seed)
    eta = rng.normal(scale=0.5, size=(env.num_states, env.num_states))
    streams = Streams(seed, "gradcheck")
    tape, p, obj, batches = reset_unroll(eta, env, kind, inner, meta, streams)
    grad = tape.backward(obj)[p.id]

    def f(e):
        return reset_unroll(e, env, kind, inner, meta, Streams(seed, "gradcheck"),
                            batches=batches)[2].value[0, 0]

    flat = np.abs(grad).ravel()
    coords = list(np.argsort(-flat)[: num_coords // 2])
    coords += list(rng.choice(flat.size, size=num_coords - len(coords), replace=False))
    worst = 0.0
    for k in coords:
        idx = np.unravel_index(k, eta.shape)
        e_p, e_m = eta.copy(), eta.copy()
        e_p[idx] += FD_STEP
        e_m[idx] -= FD_STEP
        fd = (f(e_p) - f(e_m)) / (2 * FD_STEP)
        worst = max(worst, relative_error(grad[idx], fd))
    return worst
