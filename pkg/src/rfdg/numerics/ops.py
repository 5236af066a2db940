"""Differentiable primitives used by the network and the losses.

Every function takes and returns :class:`Tensor`. Shapes follow the usual
deep-learning conventions: ``(B, C, L)`` for sequences, ``(B, F)`` for
feature rows, weights as ``(out, in[, k])``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, unbroadcast

LEAKY_SLOPE = 0.01


# -- activations -------------------------------------------------------------


def relu(x):
    mask = x.data > 0
    return Tensor.make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope=LEAKY_SLOPE):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor.make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor.make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x):
    out = np.tanh(x.data)
    return Tensor.make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(x):
    xd = x.data
    out = np.logaddexp(0.0, xd).astype(x.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return Tensor.make(out, (x,), lambda g: (g * sig,), "softplus")


ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


# -- softmax family --------------------------------------------------------


def softmax(x):
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor.make(out, (x,), back, "softmax")


def log_softmax(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return Tensor.make(out, (x,), back, "log_softmax")


def cross_entropy(logits, labels):
    """Mean cross-entropy of ``(B, C)`` logits against integer labels in ``[0, C)``."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"cross_entropy: labels outside [0, {logits.shape[1]})")
    B = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / B),)

    return Tensor.make(np.asarray(loss, dtype=logits.dtype), (logits,), back, "cross_entropy")


# -- layers ----------------------------------------------------------------


def linear(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape ``(B, in)``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", weight.shape, bias.shape, detail="bias")
        out = out + bias.data

    def back(g):
        grads = (g @ wd, g.T @ xd)
        return grads + ((g.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor.make(out, parents, back, "linear")


def conv1d(x, weight, bias=None, padding=1):
    """Stride-1 1-D convolution (cross-correlation).

    x: ``(B, C_in, L)``; weight: ``(C_out, C_in, k)``; output length
    ``L + 2*padding - k + 1``.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    B, cin, L = x.shape
    cout, _, k = weight.shape
    lout = L + 2 * padding - k + 1
    if lout < 1:
        raise ShapeError("conv1d", x.shape, weight.shape, detail="kernel longer than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # (B, cin, lout, k) -> (cin, k, B, lout) -> (cin*k, B*lout)
    cols = sliding_window_view(xp, k, axis=2).transpose(1, 3, 0, 2).reshape(cin * k, B * lout)
    w2 = weight.data.reshape(cout, cin * k)
    out = (w2 @ cols).reshape(cout, B, lout).transpose(1, 0, 2)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(1, 0, 2).reshape(cout, B * lout)
        dw = (g2 @ cols.T).reshape(weight.shape)
        dcols = (w2.T @ g2).reshape(cin, k, B, lout)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for j in range(k):
            dxp[:, :, j:j + lout] += dcols[:, j].transpose(1, 0, 2)
        dx = dxp[:, :, padding:padding + L] if padding else dxp
        grads = (dx, dw)
        return grads + ((g.sum(axis=(0, 2)),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor.make(out, parents, back, "conv1d")


def batchnorm1d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalization over channel axis 1 of ``(B, C)`` or ``(B, C, L)`` input.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (plain arrays) are updated in place; in eval mode the
    running statistics are used and the op is a fixed affine map.
    """
    if x.ndim not in (2, 3) or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batchnorm1d", x.shape, gamma.shape, beta.shape)
    axes = (0,) if x.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    xd = x.data
    if training:
        m = xd.size // xd.shape[1]
        if m < 2:
            raise ShapeError("batchnorm1d", x.shape, detail="need more than one value per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)

    def back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd
        if training:
            mm = xd.size // xd.shape[1]
            dx = (inv.reshape(bshape) / mm) * (
                mm * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return Tensor.make(out, (x, gamma, beta), back, "batchnorm1d")


def maxpool1d(x, window=2):
    """Non-overlapping max pool (stride == window) over the last axis."""
    if x.ndim != 3 or x.shape[2] < window:
        raise ShapeError("maxpool1d", x.shape, detail=f"window {window}")
    B, C, L = x.shape
    lo = L // window
    xr = x.data[:, :, :lo * window].reshape(B, C, lo, window)
    idx = xr.argmax(axis=-1)[..., None]
    out = np.take_along_axis(xr, idx, axis=-1)[..., 0]

    def back(g):
        d = np.zeros((B, C, lo, window), dtype=g.dtype)
        np.put_along_axis(d, idx, g[..., None], axis=-1)
        dx = np.zeros((B, C, L), dtype=g.dtype)
        dx[:, :, :lo * window] = d.reshape(B, C, lo * window)
        return (dx,)

    return Tensor.make(out, (x,), back, "maxpool1d")


def global_avg_pool(x):
    """``(B, C, L) -> (B, C)`` mean over the sequence axis."""
    if x.ndim != 3:
        raise ShapeError("global_avg_pool", x.shape)
    L = x.shape[2]
    return Tensor.make(x.data.mean(axis=2), (x,),
                       lambda g: (np.repeat(g[:, :, None] / L, L, axis=2),), "global_avg_pool")


# -- statistics and norms ------------------------------------------------------


def batch_covariance(h):
    """Unbiased sample covariance ``(d, d)`` of the rows of ``h`` (``n >= 2``)."""
    if h.ndim != 2 or h.shape[0] < 2:
        raise ShapeError("batch_covariance", h.shape, detail="need a 2-D input with at least 2 rows")
    n = h.shape[0]
    c = h.data - h.data.mean(axis=0, keepdims=True)
    out = (c.T @ c) / (n - 1)
    # Centering contributes nothing: the rows of c sum to zero.
    return Tensor.make(out, (h,), lambda g: (c @ (g + g.T) / (n - 1),), "batch_covariance")


def sq_frobenius(a):
    """Sum of squared entries."""
    ad = a.data
    return Tensor.make(np.asarray((ad * ad).sum(), dtype=ad.dtype), (a,), lambda g: (2.0 * g * ad,), "sq_frobenius")


def sq_l2_distance(a, b):
    """Squared Euclidean distance over the last axis (broadcasting)."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("sq_l2_distance", a.shape, b.shape) from None
    diff = a.data - b.data
    out = (diff * diff).sum(axis=-1)

    def back(g):
        gd = 2.0 * g[..., None] * diff
        return unbroadcast(gd, a.shape), unbroadcast(-gd, b.shape)

    return Tensor.make(np.asarray(out), (a, b), back, "sq_l2_distance")


def l2_norm(x):
    """Euclidean norm of all entries; the subgradient at zero is taken as zero."""
    xd = x.data
    n = float(np.sqrt((xd * xd).sum()))

    def back(g):
        if n == 0.0:
            return (np.zeros_like(xd),)
        return (g * xd / n,)

    return Tensor.make(np.asarray(n, dtype=xd.dtype), (x,), back, "l2_norm")


def sqrt(x):
    """Elementwise square root; zero entries get zero gradient."""
    out = np.sqrt(x.data)

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0).astype(out.dtype),)

    return Tensor.make(out, (x,), back, "sqrt")


def take_along_axis(x, index, axis):
    index = np.asarray(index, dtype=np.intp)
    out = np.take_along_axis(x.data, index, axis=axis)

    def back(g):
        d = np.zeros_like(x.data)
        # put_along_axis overwrites duplicates, so scatter with add.at instead
        grids = list(np.indices(index.shape, sparse=True))
        grids[axis] = index
        np.add.at(d, tuple(grids), g)
        return (d,)

    return Tensor.make(out, (x,), back, "take_along_axis")


def sort(x, axis=0):
    """Sort values along ``axis``; the gradient follows the permutation."""
    return take_along_axis(x, np.argsort(x.data, axis=axis, kind="stable"), axis)


def clamp_min(x, lo=0.0):
    mask = x.data >= lo
    return Tensor.make(np.where(mask, x.data, lo).astype(x.dtype), (x,), lambda g: (g * mask,), "clamp_min")
