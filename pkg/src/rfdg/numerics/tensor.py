"""Dense tensor with a recorded computation graph and reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError, ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}

# Finite-value checks after every op. Cheap relative to conv/matmul.
CHECK_FINITE = True


def as_dtype(dtype):
    """Map ``"f32"``/``"f64"`` (or a numpy dtype) to a numpy dtype."""
    if isinstance(dtype, str):
        try:
            return np.dtype(_DTYPES[dtype])
        except KeyError:
            raise ValueError(f"unknown dtype {dtype!r}; expected one of {sorted(_DTYPES)}") from None
    return np.dtype(dtype)


def dtype_name(dtype) -> str:
    return "f64" if np.dtype(dtype) == np.float64 else "f32"


def _check_finite(data, op):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericalError(f"{op}: produced non-finite values")


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """Row-major real array that remembers how it was computed.

    Only tensors with ``requires_grad`` keep references to their parents, so
    inference graphs cost nothing beyond the arrays themselves.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, _op=""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=as_dtype(dtype) if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={dtype_name(self.dtype)}{flag})"

    # -- graph construction -------------------------------------------------
    @staticmethod
    def make(data, parents, backward, op):
        """Wrap an op result; records parents only if any needs a gradient."""
        _check_finite(data, op)
        needs = any(p.requires_grad for p in parents)
        if needs:
            return Tensor(data, True, _parents=tuple(parents), _backward=backward, _op=op)
        return Tensor(data, _op=op)

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf needing one."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape, detail="loss must be a scalar")
        backward(self)

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return mul(self, self._lift(-1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

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

    @property
    def T(self):
        return transpose(self, None)

    def take(self, index, axis=0):
        return take(self, index, axis)


class Parameter(Tensor):
    """A trainable leaf. ``grad`` always matches ``value`` in shape once set."""

    def __init__(self, data, trainable=True, dtype=None, name=""):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.trainable = trainable
        self.name = name

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.shape})"


def backward(loss):
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad(loss, params):
    """Fill ``p.grad`` with d(loss)/dp for each trainable parameter.

    Parameters not reachable from ``loss`` get an all-zero gradient.
    Returns the list of gradient arrays in ``params`` order.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError("grad", getattr(loss, "shape", ()), detail="loss must be a scalar")
    params = [p for p in params if getattr(p, "trainable", True)]
    for p in params:
        p.grad = None
    if loss.requires_grad:
        backward(loss)
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out


# -- elementwise arithmetic ------------------------------------------------


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b):
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor.make(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b):
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return Tensor.make(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b):
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return Tensor.make(ad * bd, (a, b),
                       lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b):
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return Tensor.make(out, (a, b), back, "div")


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    ad = a.data
    e = float(exponent)
    out = ad ** e
    return Tensor.make(out, (a,), lambda g: (g * e * ad ** (e - 1.0),), "pow")


def exp(a):
    out = np.exp(a.data)
    return Tensor.make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return Tensor.make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def absolute(a):
    ad = a.data
    return Tensor.make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


# -- linear algebra & shape ------------------------------------------------


def matmul(a, b):
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ShapeError("matmul", a.shape, b.shape, detail="2-D operands only")
    return Tensor.make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor.make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape):
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return Tensor.make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def tsum(a, axis=None, keepdims=False):
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor.make(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def take(a, index, axis=0):
    """Gather entries of ``a`` along ``axis`` (indices may repeat)."""
    index = np.asarray(index, dtype=np.intp)
    src = a.shape
    out = np.take(a.data, index, axis=axis)

    def back(g):
        full = np.zeros(src, dtype=g.dtype)
        np.add.at(full, (slice(None),) * (axis % len(src)) + (index,), g)
        return (full,)

    return Tensor.make(out, (a,), back, "take")


def stack(tensors, axis=0):
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *[t.shape for t in tensors])
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.make(out, tuple(tensors), back, "stack")


def concat(tensors, axis=0):
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor.make(out, tuple(tensors), back, "concat")
