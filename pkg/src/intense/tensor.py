"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed inside an active :class:`Tape` whose operands require
gradients are recorded in execution order; :func:`backward` walks the tape in
reverse and returns the gradient of a scalar loss for every leaf tensor that
requires one.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> backward(tape, loss)[w]
    array([2., 4.])
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations; confined to one thread."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, exponent: power(self, exponent)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, index: getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        tape.nodes.append(Node(out, tuple(parents), vjp))
        return out
    return Tensor(data)


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of ``loss`` for every leaf tensor reached on ``tape``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    produced = set()
    for node in reversed(tape.nodes):
        produced.add(id(node.out))
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
                owners[key] = parent
    return {owners[k]: g for k, g in grads.items() if k not in produced}


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise arithmetic -----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    """``a ** exponent`` for a constant real exponent."""
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.data ** exponent

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            local = exponent * a.data ** (exponent - 1.0)
        return (g * np.where(np.isfinite(local), local, 0.0),)

    return _make(out, (a,), vjp)


def sqrt(a):
    """Square root with a zero (sub)gradient at 0 instead of infinity."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _make(out, (a,), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a):
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * sig,)

    return _make(out, (a,), vjp)


# reductions and shape ---------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand(g, a.shape, axis, keepdims)) / count,))


def amax(a, axis: int):
    """Maximum along ``axis``; the gradient goes to the first maximising index."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def vjp(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return _make(out, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


# linear algebra ----------------------------------------------------------------

def matmul(a, b):
    """``a @ b`` for a batched left operand and a matrix or vector right operand."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim not in (1, 2):
        raise ContractError("matmul supports a 1-D or 2-D right operand")
    lead = tuple(range(a.ndim - 1))

    def vjp(g):
        gb = np.tensordot(a.data, g, axes=(lead, lead)) if b.requires_grad else None
        if not a.requires_grad:
            return None, gb
        if b.ndim == 1:
            return np.multiply.outer(g, b.data), gb
        return g @ b.data.T, gb

    return _make(a.data @ b.data, (a, b), vjp)


def einsum(subscripts: str, *operands):
    """Differentiable ``numpy.einsum``; explicit ``->`` form, no ellipsis or traces."""
    operands = [as_tensor(t) for t in operands]
    inputs, output = subscripts.replace(" ", "").split("->")
    inputs = inputs.split(",")
    if any(len(set(sub)) != len(sub) for sub in inputs) or "." in subscripts:
        raise ContractError(f"einsum {subscripts!r}: repeated labels within an operand "
                            "and ellipsis are not supported")
    out = np.einsum(subscripts, *[t.data for t in operands], optimize=len(operands) > 2)

    def vjp(g):
        grads = []
        for i, t in enumerate(operands):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [op.data for j, op in enumerate(operands) if j != i]
            other_subs = [s for j, s in enumerate(inputs) if j != i]
            present = set(output).union(*other_subs)
            target = inputs[i]
            kept = "".join(c for c in target if c in present)
            spec = ",".join([output] + other_subs) + "->" + kept
            gi = np.einsum(spec, g, *others, optimize=len(others) > 1)
            if len(kept) != len(target):
                # labels summed within operand i alone: broadcast back
                shape = [n if c in present else 1 for c, n in zip(target, t.shape)]
                gi = np.broadcast_to(gi.reshape(shape), t.shape).copy()
            grads.append(gi)
        return grads

    return _make(out, operands, vjp)


def outer_product(a, b):
    """out[i..., j...] = a[i...] * b[j...]."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.multiply.outer(a.data, b.data)

    def vjp(g):
        ra, rb = a.ndim, b.ndim
        ga = np.tensordot(g, b.data, axes=(tuple(range(ra, ra + rb)), tuple(range(rb))))
        gb = np.tensordot(a.data, g, axes=(tuple(range(ra)), tuple(range(ra))))
        return ga, gb

    return _make(out, (a, b), vjp)


def batch_outer(a, b):
    """Per-sample outer product over a shared leading batch axis."""
    a, b = as_tensor(a), as_tensor(b)
    n = a.shape[0]
    fa = a.reshape(n, -1) if a.ndim != 2 else a
    fb = b.reshape(n, -1) if b.ndim != 2 else b
    out = einsum("bi,bj->bij", fa, fb)
    return out.reshape((n,) + a.shape[1:] + b.shape[1:])


def frobenius_sq(a, axis=None):
    """Sum of squared entries (over all axes, or all but a batch axis)."""
    a = as_tensor(a)
    if axis is None:
        return _make(np.sum(a.data * a.data), (a,), lambda g: (2.0 * g * a.data,))
    axes = tuple(ax for ax in range(a.ndim) if ax != axis % a.ndim)
    out = np.sum(a.data * a.data, axis=axes)

    def vjp(g):
        return (2.0 * np.expand_dims(g, axes) * a.data,)

    return _make(out, (a,), vjp)


def l2_norm(a):
    """Euclidean norm of all entries; subgradient 0 at the zero vector."""
    a = as_tensor(a)
    norm = float(np.sqrt(np.sum(a.data * a.data)))

    def vjp(g):
        if norm == 0.0:
            return (np.zeros(a.shape),)
        return (g * a.data / norm,)

    return _make(norm, (a,), vjp)
