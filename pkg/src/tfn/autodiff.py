"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every primitive below computes its forward value eagerly and, when a
:class:`Tape` is active and any operand requires a gradient, records a
closure that propagates the upstream gradient to its operands.  All
primitives accept a leading batch axis; the per-utterance shapes are the
special case ``B = 1`` or the unbatched arrays themselves.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg.blas import daxpy

DTYPE = np.float64

# Checking every op output costs one pass over the result; cheap next to the op itself.
CHECK_FINITE = True

_local = threading.local()


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class BackwardError(RuntimeError):
    """Illegal use of :meth:`Tape.backward`."""


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A value in the graph.  ``grad`` is filled during backward."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    # operator sugar; each maps onto a primitive below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Parameter(Tensor):
    """A trainable leaf.  Its gradient buffer is allocated once and reused.

    Between two backward passes the buffer must be reset with
    :meth:`zero_grad`; a second backward onto unreset gradients raises.
    """

    __slots__ = ("_touched", "_pending")

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self._touched = False
        self._pending = False

    def zero_grad(self) -> None:
        self.grad.fill(0.0)
        self._touched = False
        self._pending = False

    def _accumulate(self, g: np.ndarray) -> None:
        if not self._touched:
            np.copyto(self.grad, g)
            self._touched = True
        else:
            self.grad += g

    def _accumulate_dot(self, a: np.ndarray, b: np.ndarray) -> None:
        # a @ b written straight into the persistent buffer when possible
        if not self._touched:
            np.dot(a, b, out=self.grad)
            self._touched = True
        else:
            self.grad += a @ b

    def _accumulate_scaled(self, x: np.ndarray, alpha: float) -> None:
        if not self._touched:
            np.multiply(x, alpha, out=self.grad)
            self._touched = True
        else:
            daxpy(x.reshape(-1), self.grad.reshape(-1), a=alpha)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops.

    Used as a context manager; ops executed inside the ``with`` block are
    recorded.  ``backward`` replays them in reverse creation order, which is
    a valid reverse topological order because operands always exist before
    the ops that consume them.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.parameters: dict[int, Parameter] = {}
        self.consumed = False

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, node: Tensor) -> None:
        self.nodes.append(node)
        for p in node._parents:
            if isinstance(p, Parameter):
                self.parameters[id(p)] = p

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise BackwardError("tape already replayed; record a new forward pass")
        if loss.data.size != 1:
            raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
        stale = [p.name or repr(p) for p in self.parameters.values() if p._pending]
        if stale:
            raise BackwardError(
                f"gradients of {', '.join(stale[:3])} were not reset since the last backward"
            )
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        for node in self.nodes:
            if node is not loss:
                node.grad = None
        for p in self.parameters.values():
            p._pending = True
        self.consumed = True


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def _result(data: np.ndarray, parents: Sequence[Tensor], fn, op: str) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        tape._record(out)
    return out


def _send(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._accumulate(g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            _send(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _send(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), fn, "mul")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_array(x.data)

    def fn(g):
        _send(x, g * s * (1.0 - s))

    return _result(s, (x,), fn, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def fn(g):
        _send(x, g * (1.0 - t * t))

    return _result(t, (x,), fn, "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def fn(g):
        _send(x, g * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), fn, "relu")


def log(x: Tensor, eps: float = 1e-12) -> Tensor:
    """log(max(x, eps)); the gradient is zero where the clamp is active."""
    live = x.data > eps
    safe = np.where(live, x.data, eps)

    def fn(g):
        _send(x, np.where(live, g / safe, 0.0))

    return _result(np.log(safe), (x,), fn, "log")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        _send(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (x,), fn, "softmax")


# ---------------------------------------------------------------- linear algebra


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"affine expects input dim {weight.shape[1]}, got {x.shape[-1]}"
        )
    y = x.data @ weight.data.T
    if bias is not None:
        y += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        g2 = g.reshape(1, -1) if g.ndim == 1 else g
        x2 = x.data.reshape(1, -1) if x.ndim == 1 else x.data
        if x.requires_grad:
            _send(x, (g2 @ weight.data).reshape(x.shape))
        if weight.requires_grad:
            if isinstance(weight, Parameter):
                weight._accumulate_dot(g2.T, x2)
            else:
                weight._accumulate(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            _send(bias, g2.sum(axis=0))

    return _result(y, parents, fn, "affine")


def outer3(u: Tensor, v: Tensor, w: Tensor) -> Tensor:
    """T[..., i, j, k] = u[..., i] * v[..., j] * w[..., k].

    Products are formed left to right, ``(u[i] * v[j]) * w[k]``.
    """
    uv = u.data[..., :, None] * v.data[..., None, :]
    t = uv[..., None] * w.data[..., None, None, :]

    def fn(g):
        if u.requires_grad or v.requires_grad:
            # contract the acoustic axis first; reused by both u and v
            gw = np.einsum("...ijk,...k->...ij", g, w.data)
            if u.requires_grad:
                _send(u, np.einsum("...ij,...j->...i", gw, v.data))
            if v.requires_grad:
                _send(v, np.einsum("...ij,...i->...j", gw, u.data))
        if w.requires_grad:
            _send(w, np.einsum("...ijk,...ij->...k", g, uv))

    return _result(t, (u, v, w), fn, "outer3")


def sum_squares(x: Tensor) -> Tensor:
    """Scalar sum of x**2, with an in-place gradient path for large parameters."""
    flat = x.data.reshape(-1)
    val = np.dot(flat, flat)

    def fn(g):
        if isinstance(x, Parameter):
            x._accumulate_scaled(x.data, 2.0 * float(g))
        else:
            _send(x, 2.0 * float(g) * x.data)

    return _result(np.asarray(val), (x,), fn, "sum_squares")


# ---------------------------------------------------------------- structure


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _send(t, piece)

    return _result(data, tensors, fn, "concat")


def getitem(x: Tensor, index) -> Tensor:
    def fn(g):
        full = np.zeros_like(x.data)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        _send(x, full)

    return _result(np.array(x.data[index]), (x,), fn, "getitem")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(x: Tensor, shape) -> Tensor:
    def fn(g):
        _send(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), fn, "reshape")


def sum_(x: Tensor, axis=None) -> Tensor:
    def fn(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, x.shape).copy())

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), fn, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]

    def fn(g):
        g = np.asarray(g) / n
        if axis is not None:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, x.shape).copy())

    return _result(np.asarray(x.data.mean(axis=axis)), (x,), fn, "mean")
