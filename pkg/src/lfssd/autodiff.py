"""Tape-based reverse-mode differentiation over dense float64 arrays.

Only the handful of primitives a ReLU multilayer perceptron needs are
provided.  Operations are recorded on the active :class:`Tape` whenever one
of their inputs requires a gradient::

    w = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        y = mul(w, w)
    backward(y, tape)
    w.grad  # array([6.])
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import LabelRangeError, NotScalarError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "add",
    "add_bias",
    "mul",
    "relu",
    "softmax",
    "cross_entropy",
    "l2_squared_norm",
    "backward",
    "finite_difference_gradient",
    "count_backward",
]

_state = threading.local()


class Tensor:
    """A float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"


class Tape:
    """Ordered record of primitive operations executed while active.

    Each entry is ``(output, inputs, vjp)`` where ``vjp(out_grad)`` returns one
    gradient contribution per input (``None`` for inputs that do not need one).
    Entries are appended in execution order, so the list is topologically
    sorted by construction.
    """

    def __init__(self):
        self.ops = []
        self._prev = None

    def __enter__(self):
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.ops)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, inputs, vjp):
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = getattr(_state, "tape", None)
    if needs and tape is not None:
        tape.ops.append((out, inputs, vjp))
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def vjp(g):
        if A.ndim == 1:
            return g @ B.T, np.outer(A, g)
        return g @ B.T, A.T @ g

    return _record(A @ B, (a, b), vjp)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x, bias):
    """``x + bias`` with a 1-D ``bias`` broadcast over the leading axis of ``x``."""
    x, bias = _as_tensor(x), _as_tensor(bias)
    if bias.data.ndim != 1 or x.data.ndim not in (1, 2) or x.shape[-1] != bias.shape[0]:
        raise ShapeError("add_bias", x.shape, bias.shape)
    batched = x.data.ndim == 2

    def vjp(g):
        return g, (g.sum(axis=0) if batched else g)

    return _record(x.data + bias.data, (x, bias), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    A, B = a.data, b.data
    return _record(A * B, (a, b), lambda g: (g * B, g * A))


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Row-wise softmax (last axis) with the row maximum subtracted first."""
    x = _as_tensor(x)
    s = _softmax(x.data)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (x,), vjp)


def cross_entropy(logits, labels):
    """Negative log-likelihood of ``labels`` under ``softmax(logits)``.

    A 1-D ``logits`` takes a single integer label.  A 2-D batch takes one label
    per row and the result is the batch mean.
    """
    logits = _as_tensor(logits)
    z = logits.data
    if z.ndim not in (1, 2):
        raise ShapeError("cross_entropy", z.shape)
    n_classes = z.shape[-1]
    y = np.atleast_1d(np.asarray(labels))
    if y.dtype.kind not in "iu":
        y = y.astype(np.int64)
    z2 = z.reshape(-1, n_classes)
    if y.shape != (z2.shape[0],):
        raise ShapeError("cross_entropy", z.shape, np.shape(labels))
    bad = (y < 0) | (y >= n_classes)
    if bad.any():
        raise LabelRangeError(int(y[bad][0]), n_classes)

    m = z2.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z2 - m).sum(axis=1))
    rows = np.arange(z2.shape[0])
    per_sample = lse - z2[rows, y]
    value = per_sample.mean()

    def vjp(g):
        d = _softmax(z2)
        d[rows, y] -= 1.0
        d *= g / z2.shape[0]
        return (d.reshape(z.shape),)

    return _record(np.array(value), (logits,), vjp)


def l2_squared_norm(v):
    """Sum of squares of every element of ``v``."""
    v = _as_tensor(v)
    V = v.data
    return _record(np.array(np.sum(V * V)), (v,), lambda g: (2.0 * g * V,))


@contextlib.contextmanager
def count_backward():
    """Count calls to :func:`backward` made inside the ``with`` block.

    Counters nest; every active counter sees every pass.
    """
    counter = [0]
    stack = getattr(_state, "counters", None)
    if stack is None:
        stack = _state.counters = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def backward(output, tape):
    """Accumulate d(output)/d(t) into ``t.grad`` for every tensor on ``tape``.

    Tensors that ``output`` does not depend on end up with a zero gradient.
    """
    if output.data.size != 1:
        raise NotScalarError(output.shape)
    for out, inputs, _ in tape.ops:
        for t in (out, *inputs):
            if t.requires_grad and t.grad is None:
                t.zero_grad()
    if output.grad is None:
        output.zero_grad()
    output.grad = output.grad + 1.0
    for out, inputs, vjp in reversed(tape.ops):
        contributions = vjp(out.grad)
        for t, g in zip(inputs, contributions):
            if t.requires_grad:
                t.grad += g
    for counter in getattr(_state, "counters", ()):
        counter[0] += 1


def finite_difference_gradient(func, theta, h=1e-5):
    """Central differences ``(f(θ + h e_i) - f(θ - h e_i)) / 2h`` for each index."""
    theta = np.asarray(theta, dtype=np.float64)
    flat = theta.ravel()
    grad = np.empty(flat.size)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (func(plus.reshape(theta.shape)) - func(minus.reshape(theta.shape))) / (2.0 * h)
    return grad.reshape(theta.shape)
