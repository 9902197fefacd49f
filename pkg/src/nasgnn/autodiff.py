"""Tape-style reverse-mode differentiation over float64 numpy arrays.

Every operation returns a new :class:`DiffNode` that remembers its parents and
a local backward rule. The graph is rebuilt on each forward pass. Values are
vectors or matrices (plus 0-d scalars for losses); batching over graphs is
done by stacking node rows, never by adding a tensor axis.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class NonFiniteValue(ArithmeticError):
    pass


# op names whose backward rule is deliberately perturbed (test-only negative control)
_CORRUPTED: set[str] = set()


@contextlib.contextmanager
def corrupt_backward(*ops: str):
    """Scale the gradients produced by ``ops`` by 1.5 while active."""
    added = set(ops) - _CORRUPTED
    _CORRUPTED.update(added)
    try:
        yield
    finally:
        _CORRUPTED.difference_update(added)


class DiffNode:
    __slots__ = ("value", "grad", "parents", "backward_rule", "op", "requires_grad")

    def __init__(self, value, parents=(), backward_rule=None, op="leaf", requires_grad=True):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeMismatch(f"only rank <= 2 supported, got shape {value.shape}")
        self.value = value
        self.parents: tuple[DiffNode, ...] = tuple(parents)
        self.backward_rule: Callable | None = backward_rule
        self.op = op
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(value) if (requires_grad and not parents) else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self) -> float:
        if self.value.size != 1:
            raise NotScalar(f"item() on shape {self.shape}")
        return float(self.value.reshape(()))

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"DiffNode(op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> DiffNode:
    return DiffNode(value, requires_grad=False)


def _wrap(x) -> DiffNode:
    return x if isinstance(x, DiffNode) else constant(x)


def _make(value, parents, rule, op) -> DiffNode:
    needs = any(p.requires_grad for p in parents)
    return DiffNode(value, parents, rule if needs else None, op, requires_grad=needs)


def _is_scalar(x: DiffNode) -> bool:
    return x.value.size == 1 and x.value.ndim <= 1 and (x.value.ndim == 0 or x.shape == (1,))


def _unbroadcast(g: np.ndarray, like: DiffNode) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.asarray(g.sum()).reshape(like.shape)


def _check_elementwise(a: DiffNode, b: DiffNode, name: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeMismatch(f"{name}: shapes {a.shape} and {b.shape}")


def add(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")


def sub(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)), "sub")


def mul(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "mul")
    av, bv = a.value, b.value
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a), _unbroadcast(g * av, b)),
        "mul",
    )


def matmul(a, b) -> DiffNode:
    """Matrix/vector product with numpy semantics for rank 1 and 2."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeMismatch("matmul needs vectors or matrices")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions {av.shape} @ {bv.shape}")

    def rule(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _make(av @ bv, (a, b), rule, "matmul")


def linear(x, weight, bias) -> DiffNode:
    """``x @ weight.T + bias`` for a vector ``x`` or a matrix of row vectors."""
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    xv, wv = x.value, weight.value
    if wv.ndim != 2 or xv.ndim not in (1, 2) or xv.shape[-1] != wv.shape[1]:
        raise ShapeMismatch(f"linear: input {xv.shape} with weight {wv.shape}")
    if bias.shape != (wv.shape[0],):
        raise ShapeMismatch(f"linear: bias {bias.shape} for weight {wv.shape}")

    def rule(g):
        if xv.ndim == 1:
            return g @ wv, np.outer(g, xv), g
        return g @ wv, g.T @ xv, g.sum(axis=0)

    return _make(xv @ wv.T + bias.value, (x, weight, bias), rule, "linear")


def concat(parts: Sequence, axis: int = -1) -> DiffNode:
    """Concatenate along the last axis."""
    parts = [_wrap(p) for p in parts]
    if axis not in (-1, parts[0].value.ndim - 1):
        raise ShapeMismatch("concat only along the last axis")
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead or p.value.ndim != parts[0].value.ndim for p in parts):
        raise ShapeMismatch(f"concat: incompatible shapes {[p.shape for p in parts]}")
    splits = np.cumsum([p.shape[-1] for p in parts])[:-1]
    return _make(
        np.concatenate([p.value for p in parts], axis=-1),
        parts,
        lambda g: tuple(np.split(g, splits, axis=-1)),
        "concat",
    )


def sigmoid(x) -> DiffNode:
    x = _wrap(x)
    # tanh form never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x) -> DiffNode:
    x = _wrap(x)
    t = np.tanh(x.value)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(x) -> DiffNode:
    x = _wrap(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def total(x) -> DiffNode:
    """Sum of all entries, as a 0-d scalar."""
    x = _wrap(x)
    return _make(np.asarray(x.value.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), "sum")


def mean(x) -> DiffNode:
    x = _wrap(x)
    n = x.value.size
    return _make(np.asarray(x.value.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


def sum_rows(x) -> DiffNode:
    """Column sums of a matrix: ``[n, d] -> [d]``."""
    x = _wrap(x)
    if x.value.ndim != 2:
        raise ShapeMismatch(f"sum_rows needs a matrix, got {x.shape}")
    n = x.shape[0]
    return _make(x.value.sum(axis=0), (x,), lambda g: (np.broadcast_to(g, (n, g.shape[0])).copy(),), "sum_rows")


def _scatter_rows(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """``out[k] = sum of values[i] with index[i] == k``, adding in ascending ``i``."""
    out = np.zeros((n, values.shape[1]))
    if len(index) == 0:
        return out
    order = np.argsort(index, kind="stable")
    keys = index[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    out[keys[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def take_rows(x, index) -> DiffNode:
    """Gather rows ``x[index]``; gradients scatter-add back."""
    x = _wrap(x)
    index = np.asarray(index, dtype=np.intp)
    if x.value.ndim != 2:
        raise ShapeMismatch(f"take_rows needs a matrix, got {x.shape}")

    n = x.shape[0]
    return _make(x.value[index], (x,), lambda g: (_scatter_rows(g, index, n),), "take_rows")


def segment_sum(x, segment, num_segments: int) -> DiffNode:
    """Row-wise sum into buckets: ``out[k] = sum(x[i] for i with segment[i] == k)``.

    Rows are added in ascending ``i`` order, so the result is reproducible.
    """
    x = _wrap(x)
    segment = np.asarray(segment, dtype=np.intp)
    if x.value.ndim != 2 or segment.shape != (x.shape[0],):
        raise ShapeMismatch(f"segment_sum: x {x.shape} with segment {segment.shape}")
    out = _scatter_rows(x.value, segment, num_segments)
    return _make(out, (x,), lambda g: (g[segment],), "segment_sum")


def _topo(output: DiffNode) -> list[DiffNode]:
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: DiffNode) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if output.value.size != 1:
        raise NotScalar(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(_topo(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        parent_grads = node.backward_rule(g)
        if _CORRUPTED and node.op in _CORRUPTED:
            parent_grads = tuple(pg * 1.5 for pg in parent_grads)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64).reshape(p.shape)


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class CheckReport:
    tolerance: float
    step: float
    max_rel_error: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> dict[str, float]:
        return {k: e for k, e in self.max_rel_error.items() if not e <= self.tolerance}

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def finite_diff_check(
    f: Callable[[], DiffNode],
    params: Mapping[str, DiffNode] | Iterable[tuple[str, DiffNode]],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> CheckReport:
    """Compare backward() gradients of ``f`` with central differences.

    ``f`` takes no arguments and reads the current parameter values, so each
    entry is perturbed in place between evaluations and then restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    items = list(params.items() if isinstance(params, Mapping) else params)

    def evaluate() -> float:
        value = f().item()
        if not math.isfinite(value):
            raise NonFiniteValue(f"objective evaluated to {value}")
        return value

    for _, p in items:
        p.zero_grad()
    out = f()
    if not math.isfinite(out.item()):
        raise NonFiniteValue(f"objective evaluated to {out.item()}")
    backward(out)

    report = CheckReport(tolerance=tolerance, step=step)
    for name, p in items:
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = evaluate()
            flat[i] = orig - step
            minus = evaluate()
            flat[i] = orig
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)
        err = relative_error(analytic, numeric)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
    return report
