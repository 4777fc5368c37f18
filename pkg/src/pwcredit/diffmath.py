"""Reverse-mode automatic differentiation over dense float64 matrices.

A :class:`Tape` records every operation as a node holding its forward value
and a vector-Jacobian product closure.  :class:`DiffValue` is a thin handle
(tape + node id) with operator overloads, so inner-loop updates written with
ordinary arithmetic are recorded and can be differentiated end to end.

Every value is a 2-D array.  Elementwise operations require identical
shapes; Python scalars broadcast.  Use :func:`expand` to broadcast a column,
a row or a 1x1 value explicitly.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tape", "DiffValue", "ShapeError", "DomainError",
    "add", "sub", "mul", "div", "neg", "matmul", "dot", "total", "sum_rows",
    "sum_cols", "mean", "log", "exp", "sqrt", "square", "power", "sigmoid",
    "softmax_rows", "log_softmax_rows", "take", "expand", "transpose",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _as_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim > 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Tape:
    """Append-only record of operations.

    Node ids are dense and increasing; inputs of a node always have smaller
    ids, so reverse id order is a valid topological order for backward.
    A tape is single-writer.
    """

    def __init__(self) -> None:
        self._values: list[np.ndarray] = []
        self._ops: list[str] = []
        self._inputs: list[tuple[int, ...]] = []
        self._vjps: list[Optional[Vjp]] = []
        self._needs_grad: list[bool] = []
        self._params: list[int] = []

    def __len__(self) -> int:
        return len(self._values)

    def op(self, node_id: int) -> str:
        return self._ops[node_id]

    def inputs(self, node_id: int) -> tuple[int, ...]:
        return self._inputs[node_id]

    @property
    def params(self) -> list[int]:
        return list(self._params)

    def _push(self, op: str, value: np.ndarray, inputs: tuple[int, ...] = (),
              vjp: Optional[Vjp] = None) -> "DiffValue":
        node_id = len(self._values)
        value = np.asarray(value, dtype=np.float64)
        value.flags.writeable = False
        needs = any(self._needs_grad[i] for i in inputs)
        self._values.append(value)
        self._ops.append(op)
        self._inputs.append(inputs)
        self._vjps.append(vjp if needs else None)
        self._needs_grad.append(needs)
        return DiffValue(self, node_id)

    def constant(self, values) -> "DiffValue":
        arr = _as_matrix(values)
        if not np.all(np.isfinite(arr)):
            raise DomainError("constant: non-finite input")
        return self._push("constant", arr)

    def param(self, values) -> "DiffValue":
        arr = _as_matrix(values)
        if not np.all(np.isfinite(arr)):
            raise DomainError("param: non-finite input")
        out = self._push("param", arr)
        self._needs_grad[out.id] = True
        self._params.append(out.id)
        return out

    def lift(self, x) -> "DiffValue":
        if isinstance(x, DiffValue):
            if x.tape is not self:
                raise ValueError("value belongs to a different tape")
            return x
        return self.constant(x)

    def backward(self, objective: "DiffValue") -> dict[int, np.ndarray]:
        """Gradient of a 1x1 objective w.r.t. every param leaf on the tape."""
        if objective.tape is not self:
            raise ValueError("objective belongs to a different tape")
        if objective.shape != (1, 1):
            raise ShapeError(f"backward: objective must be 1x1, got {objective.shape}")
        grads: list[Optional[np.ndarray]] = [None] * (objective.id + 1)
        grads[objective.id] = np.ones((1, 1))
        for node in range(objective.id, -1, -1):
            g = grads[node]
            vjp = self._vjps[node]
            if g is None or vjp is None:
                continue
            for src, gi in zip(self._inputs[node], vjp(g)):
                if gi is None or not self._needs_grad[src]:
                    continue
                if grads[src] is None:
                    grads[src] = np.array(gi, dtype=np.float64)
                else:
                    grads[src] = grads[src] + gi
        out = {}
        for pid in self._params:
            g = grads[pid] if pid <= objective.id else None
            out[pid] = g if g is not None else np.zeros(self._values[pid].shape)
        return out


class DiffValue:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "id")
    # make numpy operators defer to the reflected DiffValue methods
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int) -> None:
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.id]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tape._values[self.id].shape

    @property
    def requires_grad(self) -> bool:
        return self.tape._needs_grad[self.id]

    def __repr__(self) -> str:
        return f"DiffValue(id={self.id}, op={self.tape.op(self.id)}, shape={self.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)

    def __pow__(self, exponent: float):
        if exponent == 0.5:
            return sqrt(self)
        if exponent == 2:
            return square(self)
        return power(self, exponent)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, DiffValue):
            return x.tape
    raise TypeError("at least one operand must be a DiffValue")


def _binary_operands(op: str, a, b):
    """Lift operands; scalars stay Python floats for broadcasting."""
    tape = _tape_of(a, b)
    if np.isscalar(a):
        a = float(a)
    else:
        a = tape.lift(a)
    if np.isscalar(b):
        b = float(b)
    else:
        b = tape.lift(b)
    if isinstance(a, DiffValue) and isinstance(b, DiffValue) and a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return tape, a, b


def _val(x):
    return x.value if isinstance(x, DiffValue) else x


def _elementwise(op: str, a, b, fwd, da, db) -> DiffValue:
    tape, a, b = _binary_operands(op, a, b)
    av, bv = _val(a), _val(b)
    out = fwd(av, bv)
    if np.ndim(out) == 0:
        out = np.full((1, 1), out)
    ids = tuple(x.id for x in (a, b) if isinstance(x, DiffValue))
    a_is, b_is = isinstance(a, DiffValue), isinstance(b, DiffValue)

    def vjp(g):
        res = []
        if a_is:
            res.append(da(g, av, bv, out))
        if b_is:
            res.append(db(g, av, bv, out))
        return res

    return tape._push(op, out, ids, vjp)


def add(a, b) -> DiffValue:
    return _elementwise("add", a, b, lambda x, y: x + y,
                        lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> DiffValue:
    return _elementwise("sub", a, b, lambda x, y: x - y,
                        lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> DiffValue:
    return _elementwise("mul", a, b, lambda x, y: x * y,
                        lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> DiffValue:
    tape = _tape_of(a, b)
    bv = _val(b) if isinstance(b, DiffValue) else np.asarray(b, dtype=np.float64)
    if np.any(bv == 0):
        node = len(tape)
        raise DomainError(f"div: zero denominator at node {node}")
    return _elementwise("div", a, b, lambda x, y: x / y,
                        lambda g, x, y, o: g / y,
                        lambda g, x, y, o: -g * o / y)


def neg(a: DiffValue) -> DiffValue:
    return a.tape._push("neg", -a.value, (a.id,), lambda g: (-g,))


def _unary(op: str, a: DiffValue, out: np.ndarray, dfn) -> DiffValue:
    x = a.value
    return a.tape._push(op, out, (a.id,), lambda g: (dfn(g, x, out),))


def log(a: DiffValue) -> DiffValue:
    if np.any(a.value <= 0):
        raise DomainError(f"log: non-positive input at node {a.id}")
    return _unary("log", a, np.log(a.value), lambda g, x, o: g / x)


def exp(a: DiffValue) -> DiffValue:
    return _unary("exp", a, np.exp(a.value), lambda g, x, o: g * o)


def sqrt(a: DiffValue) -> DiffValue:
    if np.any(a.value < 0):
        raise DomainError(f"sqrt: negative input at node {a.id}")

    # subgradient 0 at x == 0 (Adam second moments of untouched entries)
    def d(g, x, o):
        safe = np.where(o > 0, o, 1.0)
        return np.where(o > 0, g * 0.5 / safe, 0.0)

    return _unary("sqrt", a, np.sqrt(a.value), d)


def square(a: DiffValue) -> DiffValue:
    return _unary("square", a, a.value * a.value, lambda g, x, o: 2.0 * g * x)


def power(a: DiffValue, exponent: float) -> DiffValue:
    p = float(exponent)
    if p < 1 and np.any(a.value < 0):
        raise DomainError(f"power: negative base at node {a.id}")
    out = np.power(a.value, p)

    def d(g, x, o):
        if p >= 1:
            return g * p * np.power(x, p - 1)
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, g * p * np.power(safe, p - 1), 0.0)

    return _unary("power", a, out, d)


def sigmoid(a: DiffValue) -> DiffValue:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _unary("sigmoid", a, out, lambda g, x, o: g * o * (1.0 - o))


def _stable_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: DiffValue) -> DiffValue:
    out = _stable_softmax(a.value)

    def d(g, x, o):
        return o * (g - (g * o).sum(axis=1, keepdims=True))

    return _unary("softmax_rows", a, out, d)


def log_softmax_rows(a: DiffValue) -> DiffValue:
    x = a.value
    z = x - x.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def d(g, x, o):
        return g - np.exp(o) * g.sum(axis=1, keepdims=True)

    return _unary("log_softmax_rows", a, out, d)


def matmul(a, b) -> DiffValue:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimension mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape._push("matmul", av @ bv, (a.id, b.id),
                      lambda g: (g @ bv.T, av.T @ g))


def dot(a, b) -> DiffValue:
    """Sum of the elementwise product, as a 1x1 value."""
    return total(mul(a, b))


def total(a: DiffValue) -> DiffValue:
    shape = a.shape
    return a.tape._push("sum", np.full((1, 1), a.value.sum()), (a.id,),
                        lambda g: (np.full(shape, g[0, 0]),))


def mean(a: DiffValue) -> DiffValue:
    shape = a.shape
    n = max(a.value.size, 1)
    return a.tape._push("mean", np.full((1, 1), a.value.sum() / n), (a.id,),
                        lambda g: (np.full(shape, g[0, 0] / n),))


def sum_rows(a: DiffValue) -> DiffValue:
    """Reduce each row to one entry: (n, m) -> (n, 1)."""
    shape = a.shape
    return a.tape._push("sum_rows", a.value.sum(axis=1, keepdims=True), (a.id,),
                        lambda g: (np.broadcast_to(g, shape),))


def sum_cols(a: DiffValue) -> DiffValue:
    """Reduce each column to one entry: (n, m) -> (1, m)."""
    shape = a.shape
    return a.tape._push("sum_cols", a.value.sum(axis=0, keepdims=True), (a.id,),
                        lambda g: (np.broadcast_to(g, shape),))


def transpose(a: DiffValue) -> DiffValue:
    return a.tape._push("transpose", a.value.T, (a.id,), lambda g: (g.T,))


def expand(a: DiffValue, shape: tuple[int, int]) -> DiffValue:
    """Broadcast a (n,1) column, (1,m) row or (1,1) value to ``shape``."""
    src = a.shape
    if not all(s == t or s == 1 for s, t in zip(src, shape)):
        raise ShapeError(f"expand: cannot broadcast {src} to {shape}")
    axes = tuple(i for i in range(2) if src[i] == 1 and shape[i] != 1)
    out = np.broadcast_to(a.value, shape).copy()
    return a.tape._push("expand", out, (a.id,),
                        lambda g: (g.sum(axis=axes, keepdims=True) if axes else g,))


def take(a: DiffValue, rows, cols) -> DiffValue:
    """Gather ``a[rows, cols]`` with integer index arrays of equal shape.

    The result has the index arrays' shape (promoted to 2-D).  Backward
    scatter-adds, so repeated indices accumulate.
    """
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    r, c = np.broadcast_arrays(r, c)
    if r.ndim == 1:
        r, c = r.reshape(-1, 1), c.reshape(-1, 1)
    if r.ndim != 2:
        raise ShapeError("take: index arrays must be at most 2-D")
    n, m = a.shape
    if r.size and (r.min() < 0 or r.max() >= n or c.min() < 0 or c.max() >= m):
        raise ShapeError(f"take: index out of range for shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, (r, c), g)
        return (out,)

    return a.tape._push("take", a.value[r, c], (a.id,), vjp)
