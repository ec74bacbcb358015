"""Reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D array; scalars are ``1 x 1``.  Operations record
themselves on a :class:`Tape` in creation order, so a reverse sweep over the
tape is a valid reverse topological order.  Plain ``numpy.ndarray`` (or
``scipy.sparse``) operands are treated as constants and receive no gradient.

Example::

    tape = Tape()
    W = tape.leaf(np.ones((3, 2)))
    y = reduce_sum(relu(linear(tape.constant(x), W, b)))
    backward(tape, y)
    W.grad
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DiffValue",
    "Tape",
    "ShapeError",
    "DomainError",
    "TapeError",
    "linear",
    "matmul",
    "relu",
    "layer_norm",
    "row_logsumexp",
    "reduce_mean_subset",
    "reduce_sum",
    "reduce_mean",
    "log",
    "exp",
    "softplus",
    "sigmoid",
    "neg",
    "add",
    "sub",
    "mul",
    "scale",
    "clip",
    "elementwise",
    "backward",
    "grad_check",
    "GradCheckReport",
    "logsumexp_rows",
    "softplus_array",
    "sigmoid_array",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


# -- numeric kernels shared with the non-differentiable code paths ----------


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max shift; returns shape ``[n, 1]``."""
    m = np.max(x, axis=1, keepdims=True)
    return m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True))


def softplus_array(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids exp overflow for large |x|
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- core types ---------------------------------------------------------------


class DiffValue:
    """A node of the differentiation graph.

    ``grad`` has the shape of ``value`` and stays zero until
    :func:`backward` is run on a root that depends on this node.
    """

    __slots__ = ("value", "grad", "op", "parents", "tape", "requires_grad", "_backward")

    def __init__(self, value, tape=None, op="const", parents=(), backward_fn=None, requires_grad=False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        if value.ndim != 2:
            raise ShapeError(f"DiffValue must be 2-D, got shape {value.shape}")
        self.value = value
        self.grad = np.zeros_like(value)
        self.op = op
        self.parents = tuple(parents)
        self.tape = tape
        self.requires_grad = requires_grad
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"DiffValue(op={self.op!r}, shape={self.shape})"


class Tape:
    """Creation-ordered record of the differentiable values of one computation."""

    def __init__(self):
        self.nodes: list[DiffValue] = []
        self._consumed = False

    def leaf(self, value, name: str = "leaf") -> DiffValue:
        node = DiffValue(np.array(value, dtype=np.float64), self, op=name, requires_grad=True)
        self.nodes.append(node)
        return node

    def constant(self, value) -> DiffValue:
        return DiffValue(value, self, op="const")

    def _record(self, value, op, parents, backward_fn) -> DiffValue:
        if self._consumed:
            raise TapeError("tape already differentiated; call reset() before recording more ops")
        needs = any(p.requires_grad for p in parents)
        node = DiffValue(value, self, op=op, parents=parents,
                         backward_fn=backward_fn if needs else None, requires_grad=needs)
        if needs:
            self.nodes.append(node)
        return node

    def reset(self) -> None:
        """Zero every gradient and allow another backward pass."""
        for node in self.nodes:
            node.grad = np.zeros_like(node.value)
        self._consumed = False

    def __len__(self) -> int:
        return len(self.nodes)


def _lift(x, tape: Tape | None) -> DiffValue:
    if isinstance(x, DiffValue):
        return x
    return DiffValue(x, tape, op="const")


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, DiffValue) and x.tape is not None:
            return x.tape
    raise TapeError("at least one operand must be a DiffValue bound to a tape")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return np.sum(g, axis=axes, keepdims=True).reshape(shape)


# -- operations ---------------------------------------------------------------


def matmul(a, b) -> DiffValue:
    """Matrix product; either side may be a constant (dense or scipy.sparse)."""
    tape = _tape_of(a, b)
    a_sparse = sp.issparse(a)
    b_sparse = sp.issparse(b)
    if a_sparse and b_sparse:
        raise TapeError("matmul needs at least one DiffValue operand")
    A = a if a_sparse else _lift(a, tape)
    B = b if b_sparse else _lift(b, tape)
    av = A if a_sparse else A.value
    bv = B if b_sparse else B.value
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = np.asarray(av @ bv)

    def bwd(g):
        ga = None if a_sparse else np.asarray(g @ bv.T)
        gb = None if b_sparse else np.asarray(av.T @ g)
        return tuple(x for x, s in ((ga, a_sparse), (gb, b_sparse)) if not s)

    parents = tuple(x for x, s in ((A, a_sparse), (B, b_sparse)) if not s)
    return tape._record(out, "matmul", parents, bwd)


def linear(x, W, b) -> DiffValue:
    """``x @ W + b`` with ``b`` a ``[1 x c]`` row broadcast over rows."""
    tape = _tape_of(x, W, b)
    x, W, b = _lift(x, tape), _lift(W, tape), _lift(b, tape)
    if x.shape[1] != W.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with W {W.shape}")
    if b.shape != (1, W.shape[1]):
        raise ShapeError(f"linear: bias must be (1, {W.shape[1]}), got {b.shape}")
    out = x.value @ W.value + b.value

    def bwd(g):
        return g @ W.value.T, x.value.T @ g, np.sum(g, axis=0, keepdims=True)

    return tape._record(out, "linear", (x, W, b), bwd)


def relu(x) -> DiffValue:
    tape = _tape_of(x)
    mask = x.value > 0
    out = np.where(mask, x.value, 0.0)
    return tape._record(out, "relu", (x,), lambda g: (g * mask,))


def layer_norm(x, gamma, lam, epsilon: float) -> DiffValue:
    """Per-row standardization ``gamma * (x - mu) / sqrt(var + eps) + lam``.

    ``mu`` and ``var`` are the row mean and (biased) variance of ``x``.
    """
    if not epsilon > 0:
        raise ValueError("layer_norm epsilon must be > 0")
    tape = _tape_of(x, gamma, lam)
    x, gamma, lam = _lift(x, tape), _lift(gamma, tape), _lift(lam, tape)
    d = x.shape[1]
    if gamma.shape != (1, d) or lam.shape != (1, d):
        raise ShapeError(f"layer_norm: gamma/lambda must be (1, {d})")
    mu = np.mean(x.value, axis=1, keepdims=True)
    xc = x.value - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    out = gamma.value * xhat + lam.value

    def bwd(g):
        gxhat = g * gamma.value
        # standard layer-norm backward, rows independent
        gx = inv * (gxhat - np.mean(gxhat, axis=1, keepdims=True)
                    - xhat * np.mean(gxhat * xhat, axis=1, keepdims=True))
        return gx, np.sum(g * xhat, axis=0, keepdims=True), np.sum(g, axis=0, keepdims=True)

    return tape._record(out, "layer_norm", (x, gamma, lam), bwd)


def row_logsumexp(x) -> DiffValue:
    tape = _tape_of(x)
    out = logsumexp_rows(x.value)
    soft = np.exp(x.value - out)
    return tape._record(out, "row_logsumexp", (x,), lambda g: (g * soft,))


def reduce_mean_subset(x, idx) -> DiffValue:
    """Mean of the selected rows of an ``[n x 1]`` column."""
    tape = _tape_of(x)
    if x.shape[1] != 1:
        raise ShapeError(f"reduce_mean_subset expects [n x 1], got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("reduce_mean_subset: empty index set")
    n = x.shape[0]
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"reduce_mean_subset: index out of range for {n} rows")
    out = np.mean(x.value[idx, 0]).reshape(1, 1)
    w = 1.0 / idx.size

    def bwd(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx[:, 0], idx, g[0, 0] * w)
        return (gx,)

    return tape._record(out, "reduce_mean_subset", (x,), bwd)


def reduce_sum(x) -> DiffValue:
    tape = _tape_of(x)
    shape = x.shape
    return tape._record(np.sum(x.value).reshape(1, 1), "reduce_sum", (x,),
                        lambda g: (np.full(shape, g[0, 0]),))


def reduce_mean(x) -> DiffValue:
    tape = _tape_of(x)
    shape, size = x.shape, x.value.size
    return tape._record(np.mean(x.value).reshape(1, 1), "reduce_mean", (x,),
                        lambda g: (np.full(shape, g[0, 0] / size),))


def log(x) -> DiffValue:
    tape = _tape_of(x)
    bad = np.argwhere(~(x.value > 0))
    if bad.size:
        i, j = bad[0]
        raise DomainError(f"log: nonpositive input {x.value[i, j]!r} at entry ({i}, {j})")
    v = x.value
    return tape._record(np.log(v), "log", (x,), lambda g: (g / v,))


def exp(x) -> DiffValue:
    tape = _tape_of(x)
    out = np.exp(x.value)
    return tape._record(out, "exp", (x,), lambda g: (g * out,))


def softplus(x) -> DiffValue:
    tape = _tape_of(x)
    s = sigmoid_array(x.value)
    return tape._record(softplus_array(x.value), "softplus", (x,), lambda g: (g * s,))


def sigmoid(x) -> DiffValue:
    tape = _tape_of(x)
    s = sigmoid_array(x.value)
    return tape._record(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def neg(x) -> DiffValue:
    tape = _tape_of(x)
    return tape._record(-x.value, "neg", (x,), lambda g: (-g,))


def scale(x, c: float) -> DiffValue:
    """Multiply by a real scalar constant."""
    tape = _tape_of(x)
    c = float(c)
    return tape._record(c * x.value, "scale", (x,), lambda g: (c * g,))


def _binary(a, b, op):
    tape = _tape_of(a, b)
    A, B = _lift(a, tape), _lift(b, tape)
    try:
        np.broadcast_shapes(A.shape, B.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {A.shape} and {B.shape} do not broadcast") from None
    return tape, A, B


def add(a, b) -> DiffValue:
    tape, A, B = _binary(a, b, "add")
    out = A.value + B.value
    return tape._record(out, "add", (A, B),
                        lambda g: (_unbroadcast(g, A.shape), _unbroadcast(g, B.shape)))


def sub(a, b) -> DiffValue:
    tape, A, B = _binary(a, b, "sub")
    out = A.value - B.value
    return tape._record(out, "sub", (A, B),
                        lambda g: (_unbroadcast(g, A.shape), _unbroadcast(-g, B.shape)))


def mul(a, b) -> DiffValue:
    """Elementwise (broadcasting) product."""
    tape, A, B = _binary(a, b, "mul")
    out = A.value * B.value
    return tape._record(out, "mul", (A, B),
                        lambda g: (_unbroadcast(g * B.value, A.shape), _unbroadcast(g * A.value, B.shape)))


def clip(x, lo: float, hi: float) -> DiffValue:
    """Clamp to ``[lo, hi]``; zero gradient where the clamp is active."""
    tape = _tape_of(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return tape._record(np.clip(x.value, lo, hi), "clip", (x,), lambda g: (g * inside,))


_UNARY = {"log": log, "exp": exp, "softplus": softplus, "sigmoid": sigmoid, "neg": neg}
_BINARY = {"add": add, "sub": sub}


def elementwise(op: str, x, other=None) -> DiffValue:
    """Dispatch by name: log, exp, softplus, sigmoid, neg, add, sub, mul-by-scalar."""
    if op in _UNARY:
        return _UNARY[op](x)
    if op in _BINARY:
        return _BINARY[op](x, other)
    if op == "mul-by-scalar":
        return scale(x, other)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- differentiation ------------------------------------------------------------


def backward(tape: Tape, root: DiffValue) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every node on the tape."""
    if root.value.shape != (1, 1):
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if root.tape is not tape:
        raise TapeError("root was not recorded on this tape")
    if tape._consumed:
        raise TapeError("backward already ran on this tape; call tape.reset() first")
    tape._consumed = True
    if not root.requires_grad:
        return
    root.grad = np.ones((1, 1))
    for node in reversed(tape.nodes):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad:
                parent.grad = parent.grad + g


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    per_leaf: list[float] = field(default_factory=list)
    n_entries: int = 0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e}, {self.n_entries} entries)"


def grad_check(
    fn: Callable[..., DiffValue],
    leaves: Sequence[np.ndarray],
    step: float = 1e-4,
    tol: float = 1e-4,
    floor: float = 1e-6,
    grad_fn: Callable[..., Sequence[np.ndarray]] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``fn(tape, *leaf_values)`` must build a scalar :class:`DiffValue` from the
    leaves it receives.  The relative error of an entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    ``grad_fn``, when given, replaces the tape gradient as the analytic side;
    it takes the raw leaf arrays and returns one gradient array per leaf.
    """
    if not step > 0:
        raise ValueError("grad_check step must be > 0")
    base = [np.array(v, dtype=np.float64) for v in leaves]

    if grad_fn is None:
        tape = Tape()
        nodes = [tape.leaf(v) for v in base]
        root = fn(tape, *nodes)
        backward(tape, root)
        analytic = [n.grad.copy() for n in nodes]
    else:
        analytic = [np.asarray(g, dtype=np.float64) for g in grad_fn(*base)]

    def value_at(vals):
        t = Tape()
        return fn(t, *[t.leaf(v) for v in vals]).item()

    per_leaf = []
    n_entries = 0
    for k, v in enumerate(base):
        worst = 0.0
        for idx in np.ndindex(v.shape):
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[k][idx] += step
            minus[k][idx] -= step
            numeric = (value_at(plus) - value_at(minus)) / (2.0 * step)
            a = analytic[k][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
            n_entries += 1
        per_leaf.append(worst)
    max_err = max(per_leaf, default=0.0)
    return GradCheckReport(max_err, tol, max_err <= tol, per_leaf, n_entries)
