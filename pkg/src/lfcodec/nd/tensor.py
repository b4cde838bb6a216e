"""Dense float64 tensors with reverse-mode gradients.

Every differentiable operation records its inputs and a closure that maps the
upstream gradient to input gradients. ``Tensor.backward`` walks that record
(the tape) in reverse topological order. Only the operators the codec needs
are provided; there is no general graph compiler.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy import special

from lfcodec.errors import NumericError, ShapeError, StateError

_state = threading.local()

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if not self.requires_grad:
            raise StateError("backward() called on a tensor without a recorded forward graph")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"upstream grad shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._prev, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def make_op(data, parents, backward):
    """Wrap ``data`` as the result of an op; record it only if some parent needs grad."""
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a):
    a = as_tensor(a)
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return make_op(out, (a,), lambda g: (g * special.expit(a.data),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def normal_cdf(a):
    """Standard normal CDF, evaluated through erfc for accurate tails."""
    a = as_tensor(a)
    out = 0.5 * special.erfc(-a.data / _SQRT2)
    return make_op(out, (a,), lambda g: (g * _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data),))


def gelu(a):
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * special.erfc(-x / _SQRT2)

    def backward(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return make_op(x * cdf, (a,), backward)


def clamp_min(a, lo):
    """``max(a, lo)``; the gradient is zero where the bound is active."""
    a = as_tensor(a)
    mask = a.data >= lo
    return make_op(np.where(mask, a.data, lo), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size / np.asarray(a.data.sum(axis=axis, keepdims=keepdims)).size
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(xs, axis=1):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(
            i != axis % len(ref) and p != q for i, (p, q) in enumerate(zip(ref, other))
        ):
            raise ShapeError(f"cannot concat shapes {xs[0].shape} and {x.shape} on axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return make_op(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def channel_slice(a, start, stop):
    """``a[:, start:stop]`` for NCHW tensors."""
    a = as_tensor(a)

    def backward(g):
        out = np.zeros(a.shape)
        out[:, start:stop] = g
        return (out,)

    return make_op(a.data[:, start:stop], (a,), backward)


def matmul(a, b):
    """Batched matrix product with numpy ``@`` semantics (no broadcasting of batch dims)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), backward)


def upsample_nearest(a, factor):
    """Nearest-neighbour replication of the last two axes by ``factor`` (int or (fh, fw))."""
    a = as_tensor(a)
    fh, fw = (factor, factor) if np.isscalar(factor) else factor
    fh, fw = int(fh), int(fw)
    if fh < 1 or fw < 1:
        raise ShapeError("upsample factor must be >= 1")
    out = a.data
    if fh > 1:
        out = np.repeat(out, fh, axis=-2)
    if fw > 1:
        out = np.repeat(out, fw, axis=-1)

    def backward(g):
        h, w = a.shape[-2:]
        g = g.reshape(g.shape[:-2] + (h, fh, w, fw))
        return (g.sum(axis=(-3, -1)),)

    return make_op(out, (a,), backward)


def pad2d(a, pads, mode="zero"):
    """Pad the last two axes. ``pads`` = ((top, bottom), (left, right)).

    ``mode`` is ``"zero"`` or ``"replicate"`` (edge replication).
    """
    a = as_tensor(a)
    (pt, pb), (pl, pr) = pads
    if pt == pb == pl == pr == 0:
        return a
    h, w = a.shape[-2:]
    if mode == "zero":
        out = np.zeros(a.shape[:-2] + (h + pt + pb, w + pl + pr))
        out[..., pt:pt + h, pl:pl + w] = a.data

        def backward(g):
            return (g[..., pt:pt + h, pl:pl + w],)

        return make_op(out, (a,), backward)
    if mode == "replicate":
        rows = np.clip(np.arange(-pt, h + pb), 0, h - 1)
        cols = np.clip(np.arange(-pl, w + pr), 0, w - 1)
        out = a.data[..., rows, :][..., cols]

        def backward(g):
            gh = np.zeros(g.shape[:-2] + (h, g.shape[-1]))
            _add_rows(gh, g, rows)
            gw = np.zeros(g.shape[:-2] + (h, w))
            _add_cols(gw, gh, cols)
            return (gw,)

        return make_op(out, (a,), backward)
    raise ValueError(f"unknown padding mode {mode!r}")


def _add_rows(dst, src, rows):
    for i, r in enumerate(rows):
        dst[..., r, :] += src[..., i, :]


def _add_cols(dst, src, cols):
    for j, c in enumerate(cols):
        dst[..., c] += src[..., j]
