"""Reverse-mode differentiation over a dynamically recorded tape.

Values are float64 numpy arrays of arbitrary shape; a leading batch axis is
supported by every primitive so whole minibatches can be recorded as one
tape. Forward values are computed eagerly at record time. `backward` walks
the tape once per root and returns exact gradients for every leaf.

Single tape = single thread; distinct tapes are independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeMismatchError(ValueError):
    """Raised when operand shapes violate a primitive's contract."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class NonFiniteError(FloatingPointError):
    """Raised by grad_check when a non-finite value appears."""


@dataclass(frozen=True)
class VarHandle:
    """Reference to one tape node."""

    tape: "Tape"
    node_id: int
    shape: tuple

    @property
    def value(self) -> np.ndarray:
        return self.tape._nodes[self.node_id].value

    # small amount of operator sugar; everything delegates to the tape
    def __add__(self, other: "VarHandle") -> "VarHandle":
        return self.tape.add(self, other)

    def __sub__(self, other: "VarHandle") -> "VarHandle":
        return self.tape.sub(self, other)

    def __mul__(self, other: "VarHandle") -> "VarHandle":
        return self.tape.mul(self, other)


@dataclass(slots=True)
class _Node:
    op: str
    inputs: tuple
    value: np.ndarray
    aux: object = None


def _as64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _softplus(x: np.ndarray) -> np.ndarray:
    # overflow-safe: max(x,0) + log(1+exp(-|x|))
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive registry: op -> (forward, backward)
# forward(values, aux) -> ndarray
# backward(grad_out, values, out_value, aux) -> list of per-input grads
# ---------------------------------------------------------------------------

_UNARY: dict[str, tuple[Callable, Callable]] = {
    "sigmoid": (_sigmoid, lambda g, x, y: g * y * (1.0 - y)),
    "tanh": (np.tanh, lambda g, x, y: g * (1.0 - y * y)),
    "softplus": (_softplus, lambda g, x, y: g * _sigmoid(x)),
    "exp": (np.exp, lambda g, x, y: g * y),
    "log": (np.log, lambda g, x, y: g / x),
    "sqrt": (np.sqrt, lambda g, x, y: g / (2.0 * y)),
    # |x| at 0: subgradient midpoint 0, via sign()
    "abs": (np.abs, lambda g, x, y: g * np.sign(x)),
}

_ELEMENTWISE = ("add", "sub", "mul")


class Tape:
    """Ordered list of primitive operations with eagerly computed values."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    # -- construction -------------------------------------------------------

    def _push(self, op: str, inputs: tuple, value: np.ndarray, aux=None) -> VarHandle:
        self._nodes.append(_Node(op, inputs, value, aux))
        return VarHandle(self, len(self._nodes) - 1, value.shape)

    def leaf(self, value) -> VarHandle:
        """Insert an input node (parameter or constant)."""
        return self._push("leaf", (), _as64(value))

    def record(self, op_kind: str, inputs: Sequence[VarHandle], aux=None) -> VarHandle:
        """Generic entry point: validate shapes, compute forward, append node."""
        ids = tuple(h.node_id for h in inputs)
        values = [self._nodes[i].value for i in ids]
        value = _forward(op_kind, values, aux)
        return self._push(op_kind, ids, value, aux)

    # -- sugar ---------------------------------------------------------------

    def add(self, a, b):
        return self.record("add", (a, b))

    def sub(self, a, b):
        return self.record("sub", (a, b))

    def mul(self, a, b):
        return self.record("mul", (a, b))

    def sigmoid(self, x):
        return self.record("sigmoid", (x,))

    def tanh(self, x):
        return self.record("tanh", (x,))

    def softplus(self, x):
        return self.record("softplus", (x,))

    def exp(self, x):
        return self.record("exp", (x,))

    def log(self, x):
        return self.record("log", (x,))

    def sqrt(self, x):
        return self.record("sqrt", (x,))

    def abs(self, x):
        return self.record("abs", (x,))

    def sum(self, x):
        return self.record("sum", (x,))

    def mean(self, x):
        return self.record("mean", (x,))

    def masked_sum(self, x, mask):
        return self.record("masked_sum", (x,), aux=_as64(mask))

    def concat(self, parts):
        return self.record("concat", tuple(parts))

    def scale(self, x, c: float):
        return self.record("scale", (x,), aux=float(c))

    def grad_scale(self, x, factor: float):
        """Identity forward; backward multiplies the upstream gradient by `factor`."""
        return self.record("grad_scale", (x,), aux=float(factor))

    def affine(self, w, x, b):
        return self.record("affine", (w, x, b))

    def reshape(self, x, shape):
        return self.record("reshape", (x,), aux=tuple(shape))

    # -- evaluation ----------------------------------------------------------

    def value(self, h: VarHandle) -> np.ndarray:
        return self._nodes[h.node_id].value

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves; bit-identical to stored values."""
        out: list[np.ndarray] = []
        for node in self._nodes:
            if node.op == "leaf":
                out.append(node.value)
            else:
                out.append(_forward(node.op, [out[i] for i in node.inputs], node.aux))
        return out

    def backward(self, root: VarHandle) -> dict[int, np.ndarray]:
        """Exact gradients of a scalar root with respect to every leaf.

        Returns a map node_id -> gradient buffer covering all leaf nodes;
        leaves not reachable from the root get zeros.
        """
        if root.tape is not self:
            raise ValueError("backward: root belongs to a different tape")
        rv = self._nodes[root.node_id].value
        if rv.size != 1:
            raise ShapeMismatchError("backward root must be scalar", rv.shape)
        nodes = self._nodes
        adjoint: list = [None] * (root.node_id + 1)
        adjoint[root.node_id] = np.ones_like(rv)
        for nid in range(root.node_id, -1, -1):
            g = adjoint[nid]
            if g is None:
                continue
            node = nodes[nid]
            if node.op == "leaf":
                continue
            values = [nodes[i].value for i in node.inputs]
            for inp, ig in zip(node.inputs, _backward(node.op, g, values, node.value, node.aux)):
                prev = adjoint[inp]
                adjoint[inp] = ig if prev is None else prev + ig
        grads: dict[int, np.ndarray] = {}
        for nid, node in enumerate(nodes):
            if node.op == "leaf":
                g = adjoint[nid] if nid <= root.node_id else None
                grads[nid] = g if g is not None else np.zeros_like(node.value)
        return grads


def _forward(op: str, values: list[np.ndarray], aux) -> np.ndarray:
    if op in _UNARY:
        if len(values) != 1:
            raise ShapeMismatchError(op, *[v.shape for v in values])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return _UNARY[op][0](values[0])
    if op in _ELEMENTWISE:
        a, b = values
        try:
            if op == "add":
                return a + b
            if op == "sub":
                return a - b
            return a * b
        except ValueError:
            raise ShapeMismatchError(op, a.shape, b.shape) from None
    if op == "sum":
        return np.asarray(values[0].sum())
    if op == "mean":
        return np.asarray(values[0].mean())
    if op == "masked_sum":
        if aux.shape != values[0].shape:
            raise ShapeMismatchError("masked_sum", values[0].shape, aux.shape)
        return np.asarray((values[0] * aux).sum())
    if op == "concat":
        head = values[0].shape[:-1]
        for v in values[1:]:
            if v.shape[:-1] != head:
                raise ShapeMismatchError("concat", values[0].shape, v.shape)
        return np.concatenate(values, axis=-1)
    if op == "scale":
        return values[0] * aux
    if op == "grad_scale":
        return values[0].copy()
    if op == "reshape":
        if int(np.prod(aux)) != values[0].size:
            raise ShapeMismatchError("reshape", values[0].shape, tuple(aux))
        return values[0].reshape(aux)
    if op == "affine":
        w, x, b = values
        if w.ndim != 2 or x.ndim not in (1, 2) or b.ndim != 1:
            raise ShapeMismatchError("affine", w.shape, x.shape, b.shape)
        m, n = w.shape
        if x.shape[-1] != n or b.shape[0] != m:
            raise ShapeMismatchError("affine", w.shape, x.shape, b.shape)
        return x @ w.T + b
    raise ValueError(f"unknown primitive {op!r}")


def _backward(op: str, g: np.ndarray, values: list[np.ndarray], out: np.ndarray, aux) -> list[np.ndarray]:
    if op in _UNARY:
        return [_UNARY[op][1](g, values[0], out)]
    if op in _ELEMENTWISE:
        a, b = values
        if op == "add":
            return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]
        if op == "sub":
            return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if op == "sum":
        return [np.full_like(values[0], float(g))]
    if op == "mean":
        return [np.full_like(values[0], float(g) / values[0].size)]
    if op == "masked_sum":
        return [float(g) * aux]
    if op == "concat":
        grads = []
        start = 0
        for v in values:
            n = v.shape[-1]
            grads.append(np.ascontiguousarray(g[..., start : start + n]))
            start += n
        return grads
    if op == "scale":
        return [g * aux]
    if op == "grad_scale":
        return [g * aux]
    if op == "reshape":
        return [g.reshape(values[0].shape)]
    if op == "affine":
        w, x, b = values
        if x.ndim == 1:
            return [np.outer(g, x), g @ w, g.copy()]
        return [g.T @ x, g @ w, g.sum(axis=0)]
    raise ValueError(f"unknown primitive {op!r}")


def grad_check(f: Callable[[Tape, VarHandle], VarHandle], point, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` builds a scalar expression from a fresh tape and one leaf. Error per
    coordinate is |analytic - numeric| / max(1, |analytic|). Raises
    NonFiniteError naming the first offending coordinate.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    point = _as64(point)
    tape = Tape()
    x = tape.leaf(point)
    root = f(tape, x)
    if root.value.size != 1:
        raise ShapeMismatchError("grad_check root must be scalar", root.value.shape)
    if not np.isfinite(root.value).all():
        raise NonFiniteError("grad_check: non-finite forward value at base point")
    analytic = tape.backward(root)[x.node_id]
    if not np.isfinite(analytic).all():
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NonFiniteError(f"grad_check: non-finite analytic gradient at coordinate {bad}")

    numeric = np.empty_like(point)
    flat = point.ravel()
    for i in range(flat.size):
        sides = []
        for sgn in (+1.0, -1.0):
            shifted = flat.copy()
            shifted[i] += sgn * eps
            t2 = Tape()
            r2 = f(t2, t2.leaf(shifted.reshape(point.shape)))
            v = float(r2.value)
            if not np.isfinite(v):
                raise NonFiniteError(f"grad_check: non-finite value at coordinate {i}")
            sides.append(v)
        numeric.flat[i] = (sides[0] - sides[1]) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
