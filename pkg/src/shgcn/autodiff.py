"""Define-by-run reverse-mode differentiation over dense float arrays.

A :class:`Tape` records every primitive applied during one forward pass.
:func:`backward` replays the adjoints in reverse and returns gradients for the
named leaves. Only the primitives the hypergraph model needs are provided;
segment operations take CSR ``indptr`` offsets and reduce in ascending order,
so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-12


class ContractError(ValueError):
    """A primitive was called with arguments that break its contract."""


class Node:
    __slots__ = ("tape", "value", "parents", "adjoint", "name", "requires_grad")

    def __init__(self, tape, value, parents=(), adjoint=None, name=None, requires_grad=True):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.adjoint = adjoint
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} shape={self.value.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Records one forward pass. ``dtype`` other than float64 is for reference evaluations."""

    def __init__(self, check_finite: bool = True, dtype=np.float64):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}
        self.check_finite = check_finite
        self.dtype = dtype

    def leaf(self, value, name: str) -> Node:
        value = np.array(value, dtype=self.dtype)
        if name in self.leaves:
            raise ContractError(f"leaf {name!r} already on tape")
        self._finite(value, f"leaf {name!r}")
        node = Node(self, value, name=name)
        self.leaves[name] = node
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        node = Node(self, np.asarray(value, dtype=self.dtype), requires_grad=False)
        self.nodes.append(node)
        return node

    def record(self, value, parents, adjoint: Callable, op: str) -> Node:
        self._finite(value, op)
        needs = any(p.requires_grad for p in parents)
        node = Node(self, value, tuple(parents), adjoint if needs else None, name=None,
                    requires_grad=needs)
        self.nodes.append(node)
        return node

    def _finite(self, value, what):
        if self.check_finite and not np.all(np.isfinite(value)):
            raise ContractError(f"non-finite values produced by {what}")


def _tape_of(*nodes) -> Tape:
    for n in nodes:
        if not isinstance(n, Node):
            raise ContractError(f"expected a tape Node, got {type(n).__name__}")
    tape = nodes[0].tape
    if any(n.tape is not tape for n in nodes):
        raise ContractError("operands live on different tapes")
    return tape


def _need(cond, msg):
    if not cond:
        raise ContractError(msg)


# ---- elementwise / linear algebra -------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    _need(a.value.ndim == 2 and b.value.ndim == 2 and a.shape[1] == b.shape[0],
          f"matmul shape mismatch {a.shape} @ {b.shape}")
    A, B = a.value, b.value
    return tape.record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")


def add(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    _need(a.shape == b.shape, f"add shape mismatch {a.shape} vs {b.shape}")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    _need(a.shape == b.shape, f"sub shape mismatch {a.shape} vs {b.shape}")
    return tape.record(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Node, b: Node) -> Node:
    """Elementwise product of equal-shape operands."""
    tape = _tape_of(a, b)
    _need(a.shape == b.shape, f"mul shape mismatch {a.shape} vs {b.shape}")
    A, B = a.value, b.value
    return tape.record(A * B, (a, b), lambda g: (g * B, g * A), "mul")


elementwise_mul = mul


def add_bias(x: Node, b: Node) -> Node:
    tape = _tape_of(x, b)
    _need(x.value.ndim == 2 and b.value.ndim == 1 and x.shape[1] == b.shape[0],
          f"add_bias shape mismatch {x.shape} + {b.shape}")
    return tape.record(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def scale(x: Node, c: float) -> Node:
    c = float(c)
    return _tape_of(x).record(x.value * c, (x,), lambda g: (g * c,), "scale")


def scale_rows(x: Node, w: Node) -> Node:
    """Multiply row ``r`` of ``x`` by ``w[r]``."""
    tape = _tape_of(x, w)
    _need(w.value.ndim == 1 and x.shape[0] == w.shape[0],
          f"scale_rows shape mismatch {x.shape} by {w.shape}")
    X, W = x.value, w.value
    if X.ndim == 1:
        return tape.record(X * W, (x, w), lambda g: (g * W, g * X), "scale_rows")
    return tape.record(X * W[:, None], (x, w),
                       lambda g: (g * W[:, None], np.einsum("ij,ij->i", g, X)), "scale_rows")


def leaky_relu(x: Node, slope: float = LEAKY_SLOPE) -> Node:
    X = x.value
    d = np.where(X > 0, 1.0, slope)
    return _tape_of(x).record(X * d, (x,), lambda g: (g * d,), "leaky_relu")


def sigmoid(x: Node) -> Node:
    X = x.value
    s = np.where(X >= 0, 1.0 / (1.0 + np.exp(-np.abs(X))), np.exp(-np.abs(X)) / (1.0 + np.exp(-np.abs(X))))
    return _tape_of(x).record(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def log(x: Node) -> Node:
    X = x.value
    _need(np.all(X > 0), "log of non-positive value")
    return _tape_of(x).record(np.log(X), (x,), lambda g: (g / X,), "log")


def softplus(x: Node) -> Node:
    """``ln(1 + e^x)`` evaluated without overflow; ``-ln sigmoid(z) = softplus(-z)``."""
    X = x.value
    out = np.maximum(X, 0.0) + np.log1p(np.exp(-np.abs(X)))
    s = np.where(X >= 0, 1.0 / (1.0 + np.exp(-np.abs(X))), np.exp(-np.abs(X)) / (1.0 + np.exp(-np.abs(X))))
    return _tape_of(x).record(out, (x,), lambda g: (g * s,), "softplus")


def l2_normalize_rows(x: Node, eps: float = NORM_EPS) -> Node:
    """Rows divided by ``max(||row||, eps)``: unit norm unless the row is below ``eps``."""
    _need(eps > 0, "eps must be positive")
    X = x.value
    _need(X.ndim == 2, f"l2_normalize_rows expects a matrix, got {X.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    big = norms >= eps
    denom = np.where(big, norms, eps)
    Y = X / denom[:, None]

    def adjoint(g):
        # d(x/|x|) = (g - y <y, g>) / |x|; below eps the map is linear
        proj = np.where(big, np.einsum("ij,ij->i", Y, g), 0.0)
        return ((g - Y * proj[:, None]) / denom[:, None],)

    return _tape_of(x).record(Y, (x,), adjoint, "l2_normalize_rows")


def row_sum(x: Node) -> Node:
    """Sum across columns: ``(n, d) -> (n,)``."""
    X = x.value
    _need(X.ndim == 2, f"row_sum expects a matrix, got {X.shape}")
    d = X.shape[1]
    return _tape_of(x).record(X.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], d, axis=1),),
                              "row_sum")


def total(x: Node) -> Node:
    """Sum of every entry, as a 0-d scalar."""
    shape = x.shape
    return _tape_of(x).record(np.asarray(x.value.sum()), (x,), lambda g: (np.full(shape, g),),
                              "sum")


def dot(u: Node, v: Node) -> Node:
    tape = _tape_of(u, v)
    _need(u.value.ndim == 1 and u.shape == v.shape, f"dot shape mismatch {u.shape} . {v.shape}")
    U, V = u.value, v.value
    return tape.record(np.asarray(U @ V), (u, v), lambda g: (g * V, g * U), "dot")


def reshape(x: Node, shape) -> Node:
    old = x.shape
    return _tape_of(x).record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat_cols(xs: list[Node]) -> Node:
    tape = _tape_of(*xs)
    _need(len({x.shape[0] for x in xs}) == 1, "concat_cols row counts differ")
    widths = np.cumsum([x.shape[1] for x in xs])[:-1]
    return tape.record(np.concatenate([x.value for x in xs], axis=1), tuple(xs),
                       lambda g: tuple(np.split(g, widths, axis=1)), "concat_cols")


def concat_rows(xs: list[Node]) -> Node:
    tape = _tape_of(*xs)
    _need(len({x.shape[1:] for x in xs}) == 1, "concat_rows trailing shapes differ")
    cuts = np.cumsum([x.shape[0] for x in xs])[:-1]
    return tape.record(np.concatenate([x.value for x in xs], axis=0), tuple(xs),
                       lambda g: tuple(np.split(g, cuts, axis=0)), "concat_rows")


# ---- gather / segment reductions --------------------------------------------------

def gather_rows(x: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.int64)
    X = x.value
    _need(idx.size == 0 or (idx.min() >= 0 and idx.max() < X.shape[0]), "gather index out of range")
    shape = X.shape

    def adjoint(g):
        out = np.zeros(shape, dtype=X.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _tape_of(x).record(X[idx], (x,), adjoint, "gather_rows")


def _segment_sum(X, indptr):
    out = np.zeros((len(indptr) - 1,) + X.shape[1:], dtype=X.dtype)
    nonempty = np.flatnonzero(np.diff(indptr) > 0)
    if len(nonempty):
        out[nonempty] = np.add.reduceat(X, indptr[nonempty], axis=0)
    return out


def segment_sum(x: Node, indptr) -> Node:
    """Sum rows ``indptr[s]:indptr[s+1]`` for each segment ``s``; empty segments give zeros."""
    indptr = np.asarray(indptr, dtype=np.int64)
    _need(indptr[-1] == x.shape[0], "segment_sum indptr does not cover the input rows")
    lengths = np.diff(indptr)
    return _tape_of(x).record(_segment_sum(x.value, indptr), (x,),
                              lambda g: (np.repeat(g, lengths, axis=0),), "segment_sum")


def segment_softmax(s: Node, indptr) -> Node:
    """Softmax of a score vector within each segment (max-subtracted)."""
    indptr = np.asarray(indptr, dtype=np.int64)
    S = s.value
    _need(S.ndim == 1 and indptr[-1] == S.shape[0], "segment_softmax expects a covered vector")
    lengths = np.diff(indptr)
    nonempty = lengths > 0
    seg_max = np.zeros(len(lengths), dtype=S.dtype)
    if np.any(nonempty):
        seg_max[nonempty] = np.maximum.reduceat(S, indptr[:-1][nonempty])
    ex = np.exp(S - np.repeat(seg_max, lengths))
    A = ex / np.repeat(_segment_sum(ex, indptr), lengths)

    def adjoint(g):
        inner = _segment_sum(g * A, indptr)
        return (A * (g - np.repeat(inner, lengths)),)

    return _tape_of(s).record(A, (s,), adjoint, "segment_softmax")


# ---- reverse pass -----------------------------------------------------------------

def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of the scalar ``loss`` for every named leaf on ``tape``."""
    _need(loss.tape is tape, "loss is not on this tape")
    _need(loss.value.size == 1, f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.adjoint is None:
            if node.name is not None and g is not None:
                grads[id(node)] = g
            continue
        for parent, pg in zip(node.parents, node.adjoint(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {name: np.asarray(grads.get(id(leaf), np.zeros_like(leaf.value)), dtype=np.float64)
            .reshape(leaf.shape)
            for name, leaf in tape.leaves.items()}


# ---- finite differences -----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def __str__(self):
        lines = [f"{name:>12s}  max rel err {err:.3e}" for name, err in self.max_rel_error.items()]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (worst {self.worst:.3e}, tol {self.tol:g})")
        return "\n".join(lines)


def finite_difference_check(f: Callable[[dict], float], params: dict[str, np.ndarray],
                            grads: dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-4,
                            abs_floor: float = 1e-8) -> GradCheckReport:
    """Compare ``grads`` with central differences of ``f`` at ``params``.

    The relative error for each entry is ``|a - n| / max(|a|, |n|, abs_floor)``.
    ``params`` is perturbed in place and restored. ``f`` may return an
    extended-precision scalar; the difference quotient keeps its precision.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    report = GradCheckReport(tol=tol)
    for name, value in params.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        worst = 0.0
        flat = value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f(params)
            flat[k] = orig - h
            fm = f(params)
            flat[k] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
            worst = max(worst, float(err))
        report.max_rel_error[name] = worst
    return report
