"""Dense float64 tensors with reverse-mode differentiation on a per-run tape.

The tape is define-by-run: operations record themselves while a ``Tape`` is
active (``with Tape() as tape:``) and ``tape.backward(loss)`` returns a map
from node id to gradient.  Tensors created or used outside a tape context are
plain values; the same forward code doubles as a cheap inference path.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, NamedTuple

import numpy as np


class TensorError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(TensorError):
    pass


class DomainError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


LEAKY_SLOPE = 0.2

_SQRT_PI = math.sqrt(math.pi)
_ERF_SATURATION = 6.0  # |erf(x) -/+ 1| < 3e-17 beyond this
_ERF_MAX_TERMS = 400


def erf_values(x):
    """Error function applied elementwise to an array, |error| < 1e-12.

    Uses the cancellation-free expansion
    erf(x) = 2x e^(-x^2)/sqrt(pi) * sum_n (2x^2)^n / (1*3*...*(2n+1)),
    saturating to +-1 for |x| >= 6 where the tail is below 3e-17.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.sign(x)
    live = np.abs(x) < _ERF_SATURATION
    if np.any(live):
        xl = x[live]
        q = 2.0 * xl * xl
        term = np.ones_like(xl)
        total = np.ones_like(xl)
        for n in range(1, _ERF_MAX_TERMS):
            term = term * q / (2 * n + 1)
            total += term
            if np.all(term <= 1e-17 * total):
                break
        out[live] = (2.0 / _SQRT_PI) * xl * np.exp(-xl * xl) * total
    return out[0] if scalar else out


_TAPES = threading.local()


def _active_tape():
    return getattr(_TAPES, "tape", None)


class _Node(NamedTuple):
    parents: tuple
    backward: Callable | None


class Tape:
    """Ordered record of primitive operations for one reverse pass.

    A tape is confined to one thread and may not be nested.  Node ids it
    assigns to tensors are cleared when the context exits, so tensors (model
    parameters in particular) can be reused on a fresh tape each step.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tracked: list[Tensor] = []

    def __enter__(self):
        if _active_tape() is not None:
            raise TensorError("a tape is already active on this thread")
        _TAPES.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.tape = None
        for t in self._tracked:
            t.node = None
        self._tracked.clear()
        return False

    def _push(self, parents, backward):
        self._nodes.append(_Node(parents, backward))
        return len(self._nodes) - 1

    def _ensure_leaf(self, t: "Tensor") -> int:
        if t.node is None:
            t.node = self._push((), None)
            self._tracked.append(t)
        return t.node

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: "Tensor") -> dict[int, "Tensor"]:
        """Reverse pass from a scalar loss; returns {node-id: gradient}.

        Every node is visited at most once, in reverse recording order (which
        is a topological order by construction).  Repeated calls on the same
        tape give bit-identical results.
        """
        if loss.node is None:
            raise TensorError("loss is not recorded on the active tape")
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.node] = np.ones((), dtype=np.float64)
        for idx in range(loss.node, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            parents, backward = self._nodes[idx]
            if backward is None:
                continue
            for pid, pg in zip(parents, backward(g)):
                if pid is None or pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        return {i: Tensor._wrap(np.asarray(g)) for i, g in enumerate(grads) if g is not None}


class Tensor:
    """Dense float64 array, optionally bound to the active tape by node id."""

    __slots__ = ("data", "node")

    def __init__(self, data, node: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.node = node

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # gradient-map fast path: values derive from already-checked tensors
        out = object.__new__(cls)
        out.data = arr
        out.node = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.node})"

    # arithmetic sugar; numbers on either side are treated as constants
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("mul", self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self):
        return elementwise("tanh", self)

    def relu(self):
        return elementwise("relu", self)

    def leaky_relu(self, alpha: float = LEAKY_SLOPE):
        return elementwise("leaky_relu", self, alpha=alpha)

    def sigmoid(self):
        return elementwise("sigmoid", self)

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def square(self):
        return elementwise("square", self)

    def sqrt(self):
        return elementwise("sqrt", self)

    def erf(self):
        return elementwise("erf", self)

    def softplus(self):
        return elementwise("softplus", self)

    def sum(self, axis: int | None = None):
        return reduce("sum", self, axis)

    def mean(self, axis: int | None = None):
        return reduce("mean", self, axis)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.float64(x))
    raise TypeError(f"expected Tensor or number, got {type(x).__name__}")


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        pids = tuple(tape._ensure_leaf(p) for p in parents)
        out.node = tape._push(pids, backward)
        tape._tracked.append(out)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of -|x| only: no overflow for any finite input
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class _UnaryRule(NamedTuple):
    forward: Callable
    gradient: Callable  # (x, y, upstream, alpha) -> grad wrt x
    domain: Callable | None  # raises DomainError on bad input


def _check_log_domain(x):
    if np.any(x <= 0.0):
        raise DomainError("log requires strictly positive input")


def _check_sqrt_domain(x):
    if np.any(x < 0.0):
        raise DomainError("sqrt requires non-negative input")


# Table of unary rules keyed by op kind.  Kept module-level so tests can
# fault-inject a corrupted derivative by patching an entry.
UNARY_RULES: dict[str, _UnaryRule] = {
    "tanh": _UnaryRule(lambda x, a: np.tanh(x), lambda x, y, g, a: g * (1.0 - y * y), None),
    "relu": _UnaryRule(lambda x, a: np.maximum(x, 0.0), lambda x, y, g, a: g * (x > 0.0), None),
    "leaky_relu": _UnaryRule(
        lambda x, a: np.where(x > 0.0, x, a * x),
        lambda x, y, g, a: g * np.where(x > 0.0, 1.0, a),
        None,
    ),
    "sigmoid": _UnaryRule(lambda x, a: _sigmoid(x), lambda x, y, g, a: g * y * (1.0 - y), None),
    "exp": _UnaryRule(lambda x, a: np.exp(x), lambda x, y, g, a: g * y, None),
    "log": _UnaryRule(lambda x, a: np.log(x), lambda x, y, g, a: g / x, _check_log_domain),
    "square": _UnaryRule(lambda x, a: x * x, lambda x, y, g, a: 2.0 * g * x, None),
    "sqrt": _UnaryRule(lambda x, a: np.sqrt(x), lambda x, y, g, a: g / (2.0 * y), _check_sqrt_domain),
    "erf": _UnaryRule(
        lambda x, a: erf_values(x),
        lambda x, y, g, a: g * (2.0 / _SQRT_PI) * np.exp(-x * x),
        None,
    ),
    "softplus": _UnaryRule(
        lambda x, a: np.logaddexp(0.0, x), lambda x, y, g, a: g * _sigmoid(x), None
    ),
}

_BINARY_KINDS = ("add", "sub", "mul", "div")


def _broadcast_ok(sa: tuple, sb: tuple) -> bool:
    # same shape, scalar with anything, or row vector (n,) with matrix (m, n)
    if sa == sb or sa == () or sb == ():
        return True
    if len(sa) == 1 and len(sb) == 2 and sa[0] == sb[1]:
        return True
    if len(sb) == 1 and len(sa) == 2 and sb[0] == sa[1]:
        return True
    return False


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # row vector broadcast over the batch axis
    return g.sum(axis=0)


def elementwise(kind: str, *operands, alpha: float = LEAKY_SLOPE) -> Tensor:
    """Apply an elementwise primitive; derivative rules are tape-recorded.

    Unary kinds take one operand; add/sub/mul/div take two.  Broadcasting is
    limited to scalar-with-tensor and row-vector-with-matrix; anything else
    raises ShapeError.
    """
    if kind in UNARY_RULES:
        if len(operands) != 1:
            raise TypeError(f"{kind} takes exactly one operand")
        (t,) = operands
        t = _as_tensor(t)
        rule = UNARY_RULES[kind]
        if rule.domain is not None:
            rule.domain(t.data)
        x = t.data
        with np.errstate(over="ignore"):  # overflow becomes NonFiniteError below
            y = rule.forward(x, alpha)
        return _result(y, (t,), lambda g: (rule.gradient(x, y, g, alpha),))

    if kind not in _BINARY_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if len(operands) != 2:
        raise TypeError(f"{kind} takes exactly two operands")
    a, b = (_as_tensor(o) for o in operands)
    sa, sb = a.data.shape, b.data.shape
    if not _broadcast_ok(sa, sb):
        raise ShapeError(f"cannot broadcast {sa} with {sb} in {kind}")
    ad, bd = a.data, b.data
    if kind == "add":
        out, bw = ad + bd, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    elif kind == "sub":
        out, bw = ad - bd, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    elif kind == "mul":
        out, bw = ad * bd, lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb))
    else:
        if np.any(bd == 0.0):
            raise DomainError("division by zero")
        out = ad / bd
        bw = lambda g: (_unbroadcast(g / bd, sa), _unbroadcast(-g * ad / (bd * bd), sb))
    return _result(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors with inner dimensions agreeing."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reduce(kind: str, t: Tensor, axis: int | None = None) -> Tensor:
    """Sum or mean over the whole tensor or one axis."""
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduce kind {kind!r}")
    t = _as_tensor(t)
    shape = t.data.shape
    if axis is not None and not (0 <= axis < t.data.ndim):
        raise ShapeError(f"axis {axis} invalid for shape {shape}")
    if axis is None:
        count = t.data.size
        out = t.data.sum()
    else:
        count = shape[axis]
        out = t.data.sum(axis=axis)
    scale = 1.0 / count if kind == "mean" else 1.0
    if kind == "mean":
        out = out * scale

    def bw(g):
        if axis is None:
            return (np.full(shape, g * scale),)
        return (np.broadcast_to(np.expand_dims(g * scale, axis), shape),)

    return _result(np.asarray(out), (t,), bw)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two matrices with equal leading dimension."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("concat needs 2-D operands")
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"leading dimensions disagree: {a.data.shape} vs {b.data.shape}")
    p = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _result(out, (a, b), lambda g: (g[:, :p], g[:, p:]))
