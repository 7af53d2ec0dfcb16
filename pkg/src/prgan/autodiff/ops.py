"""Differentiable operations over batched arrays.

Layouts are channel-first with a leading batch axis: ``(N, C, *spatial)``.
Strided convolutions use ``padding = (k - 1) // 2`` so a stride-2 layer
exactly halves an even extent, and its transpose exactly doubles it.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .node import Node, as_node

EPS_LOG = 1e-7


def _sum64(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, dtype=np.float64, keepdims=keepdims).astype(a.dtype)


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} differ")
    return Node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shapes {a.shape} and {b.shape} differ")
    return Node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = a.value.dtype.type(c)
    return Node(a.value * c, (a,), lambda g: (g * c,), "scale")


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0
    # maximum (unlike where) lets NaN through, so a diverged net is detected downstream
    y = np.maximum(x.value, x.value.dtype.type(0))
    return Node(y, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.2) -> Node:
    x = as_node(x)
    s = x.value.dtype.type(slope)
    factor = np.where(x.value > 0, x.value.dtype.type(1), s)
    return Node(x.value * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(x) -> Node:
    x = as_node(x)
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)
    return Node(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


# ------------------------------------------------------------------ reductions


def sum_all(x) -> Node:
    x = as_node(x)
    shape, dtype = x.shape, x.value.dtype
    return Node(_sum64(x.value).reshape(1), (x,), lambda g: (np.full(shape, g.item(), dtype),), "sum")


def mean_all(x) -> Node:
    x = as_node(x)
    n = x.value.size
    return scale(sum_all(x), 1.0 / n)


def reshape(x, shape) -> Node:
    x = as_node(x)
    old = x.shape
    return Node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(nodes, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, sizes, axis=axis))

    return Node(np.concatenate([n.value for n in nodes], axis=axis), nodes, bw, "concat")


# ------------------------------------------------------------------ losses


def bce_terms(p, target) -> Node:
    """Mean binary cross-entropy ``-[t log p + (1 - t) log(1 - p)]``.

    ``p`` is clamped to ``[EPS_LOG, 1 - EPS_LOG]``; the clamp passes no
    gradient where it is active.
    """
    p = as_node(p)
    t = np.broadcast_to(np.asarray(target, dtype=p.value.dtype), p.shape)
    pv = p.value
    lo, hi = EPS_LOG, 1 - EPS_LOG
    pc = np.clip(pv.astype(np.float64), lo, hi)
    terms = -(t * np.log(pc) + (1 - t) * np.log1p(-pc))
    n = pv.size
    out = np.array([terms.sum() / n], dtype=pv.dtype)
    inside = (pv >= lo) & (pv <= hi)

    def bw(g):
        d = (-(t / pc) + (1 - t) / (1 - pc)) / n
        return ((g.item() * d * inside).astype(pv.dtype),)

    return Node(out, (p,), bw, "bce")


def mse(pred, target) -> Node:
    pred = as_node(pred)
    t = np.asarray(target, dtype=pred.value.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"mse: shapes {pred.shape} and {t.shape} differ")
    diff = pred.value - t
    n = diff.size
    out = np.array([np.sum(diff.astype(np.float64) ** 2) / n], dtype=pred.value.dtype)
    return Node(out, (pred,), lambda g: ((g.item() * 2.0 / n) * diff,), "mse")


# ------------------------------------------------------------------ dense


_ROW_BLOCK = 8


def _rows_times(xv, Wt):
    """``xv @ Wt`` for 2-d ``xv``, with each row's result independent of the batch around it.

    BLAS picks different kernels (and so different summation orders) for
    different row counts. Running every row through a zero-padded block of
    fixed height keeps one sample bitwise equal to the same sample inside
    any batch.
    """
    n = xv.shape[0]
    out = np.empty((n, Wt.shape[1]), np.result_type(xv, Wt))
    for start in range(0, n, _ROW_BLOCK):
        block = xv[start:start + _ROW_BLOCK]
        rows = block.shape[0]
        if rows < _ROW_BLOCK:
            block = np.concatenate([block, np.zeros((_ROW_BLOCK - rows, xv.shape[1]), xv.dtype)])
        out[start:start + rows] = (block @ Wt)[:rows]
    return out


def fully_connected(x, W, b) -> Node:
    """``y = x W^T + b`` for ``x`` of shape ``(n_in,)`` or ``(N, n_in)``."""
    x, W, b = as_node(x), as_node(W), as_node(b)
    if W.value.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1] or x.value.ndim > 2:
        raise ValueError(
            f"fully_connected: input {x.shape} incompatible with weight {W.shape} and bias {b.shape}"
        )
    xv, Wv = x.value, W.value
    y = (_rows_times(xv[None], Wv.T)[0] if xv.ndim == 1 else _rows_times(xv, Wv.T)) + b.value

    def bw(g):
        if xv.ndim == 1:
            return g @ Wv, np.outer(g, xv), g
        return g @ Wv, g.T @ xv, _sum64(g, axis=0)

    return Node(y, (x, W, b), bw, "fc")


# ------------------------------------------------------------------ convolution


def _pad_for(k: int) -> int:
    return (k - 1) // 2


def _offsets(ksize):
    return product(*[range(k) for k in ksize])


def _window(off, out_sp, stride):
    return (slice(None), slice(None)) + tuple(
        slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out_sp)
    )


# cap on im2col buffer elements; larger batches are processed in chunks
_COL_BUDGET = 1 << 25


def _chunks(n, per_sample):
    step = max(1, _COL_BUDGET // max(per_sample, 1))
    return [slice(i, min(n, i + step)) for i in range(0, n, step)]


def _im2col(xp, ksize, stride, out_sp):
    """(N, C, *padded) -> (N, C * K, P), rows ordered channel-major then offset."""
    n, c = xp.shape[:2]
    offsets = list(_offsets(ksize))
    cols = np.empty((n, c, len(offsets)) + tuple(out_sp), dtype=xp.dtype)
    for t, off in enumerate(offsets):
        cols[:, :, t] = xp[_window(off, out_sp, stride)]
    return cols.reshape(n, c * len(offsets), -1)


def _col2im(part, c, ksize, stride, out_sp, out):
    """Scatter-add (N, C * K, P) columns back into the padded (N, C, *padded) ``out``."""
    offsets = list(_offsets(ksize))
    part = part.reshape((part.shape[0], c, len(offsets)) + tuple(out_sp))
    for t, off in enumerate(offsets):
        out[_window(off, out_sp, stride)] += part[:, :, t]


def _conv_forward(xp, W, stride, out_sp):
    n = xp.shape[0]
    W2 = W.reshape(W.shape[0], -1)
    p = int(np.prod(out_sp))
    y = np.empty((n, W.shape[0], p), dtype=xp.dtype)
    for sl in _chunks(n, W2.shape[1] * p):
        y[sl] = np.matmul(W2, _im2col(xp[sl], W.shape[2:], stride, out_sp))
    return y.reshape((n, W.shape[0]) + tuple(out_sp))


def _conv_input_grad(gy, W, stride, padded_shape):
    n, out_sp = gy.shape[0], gy.shape[2:]
    W2t = np.ascontiguousarray(W.reshape(W.shape[0], -1).T)
    p = int(np.prod(out_sp))
    g3 = gy.reshape(n, gy.shape[1], p)
    gxp = np.zeros(padded_shape, dtype=gy.dtype)
    for sl in _chunks(n, W2t.shape[0] * p):
        _col2im(np.matmul(W2t, g3[sl]), W.shape[1], W.shape[2:], stride, out_sp, gxp[sl])
    return gxp


def _conv_weight_grad(xp, gy, stride, wshape):
    n, out_sp = gy.shape[0], gy.shape[2:]
    p = int(np.prod(out_sp))
    ck = int(np.prod(wshape[1:]))
    g3 = gy.reshape(n, wshape[0], p)
    gW = np.zeros((wshape[0], ck), dtype=np.float64)
    for sl in _chunks(n, ck * p):
        cols = _im2col(xp[sl], wshape[2:], stride, out_sp)
        gW += np.matmul(g3[sl], cols.transpose(0, 2, 1)).sum(axis=0, dtype=np.float64)
    return gW.astype(gy.dtype).reshape(wshape)


def _pad(x, p, nsp):
    if p == 0:
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p)] * nsp)


def _crop(x, p, nsp):
    if p == 0:
        return x
    return x[(slice(None), slice(None)) + (slice(p, -p),) * nsp]


def _bias_grad(g):
    axes = (0,) + tuple(range(2, g.ndim))
    return _sum64(g, axis=axes)


def conv(x, W, b, stride: int = 2) -> Node:
    """Strided cross-correlation. ``W`` is ``(C_out, C_in, *k)``."""
    x, W, b = as_node(x), as_node(W), as_node(b)
    nsp = W.value.ndim - 2
    if x.value.ndim != nsp + 2:
        raise ValueError(f"conv: input {x.shape} does not match {nsp}-d kernel {W.shape}")
    if x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"conv: input {x.shape} incompatible with weight {W.shape} / bias {b.shape}")
    sp = x.shape[2:]
    if stride > 1 and any(s % stride for s in sp):
        raise ValueError(f"conv: spatial extent {sp} not divisible by stride {stride}")
    ks = W.shape[2:]
    if len(set(ks)) != 1:
        raise ValueError(f"conv: kernel must be cubic/square, got {ks}")
    p = _pad_for(ks[0])
    xp = _pad(x.value, p, nsp)
    out_sp = tuple((s + 2 * p - ks[0]) // stride + 1 for s in sp)
    Wv = W.value
    y = _conv_forward(xp, Wv, stride, out_sp)
    y += b.value.reshape((1, -1) + (1,) * nsp)

    def bw(g):
        gx = _crop(_conv_input_grad(g, Wv, stride, xp.shape), p, nsp)
        return np.ascontiguousarray(gx), _conv_weight_grad(xp, g, stride, Wv.shape), _bias_grad(g)

    return Node(y, (x, W, b), bw, f"conv{nsp}d")


def conv_transpose(x, W, b, stride: int = 2) -> Node:
    """Adjoint of :func:`conv`; ``W`` is ``(C_in, C_out, *k)``.

    Each spatial extent is multiplied by ``stride``.
    """
    x, W, b = as_node(x), as_node(W), as_node(b)
    nsp = W.value.ndim - 2
    if x.value.ndim != nsp + 2:
        raise ValueError(f"conv_transpose: input {x.shape} does not match {nsp}-d kernel {W.shape}")
    if x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(
            f"conv_transpose: input {x.shape} incompatible with weight {W.shape} / bias {b.shape}"
        )
    ks = W.shape[2:]
    if len(set(ks)) != 1:
        raise ValueError(f"conv_transpose: kernel must be cubic/square, got {ks}")
    k = ks[0]
    p = _pad_for(k)
    sp = x.shape[2:]
    out_sp = tuple(s * stride for s in sp)
    if any((o + 2 * p - k) // stride + 1 != s for o, s in zip(out_sp, sp)):
        raise ValueError(f"conv_transpose: extent {sp} cannot be scaled by {stride} with kernel {k}")
    n = x.shape[0]
    padded = (n, W.shape[1]) + tuple(o + 2 * p for o in out_sp)
    Wv, xv = W.value, x.value
    y = np.ascontiguousarray(_crop(_conv_input_grad(xv, Wv, stride, padded), p, nsp))
    y += b.value.reshape((1, -1) + (1,) * nsp)

    def bw(g):
        gp = _pad(g, p, nsp)
        gx = _conv_forward(gp, Wv, stride, sp)
        gW = _conv_weight_grad(gp, xv, stride, Wv.shape)
        return gx, gW, _bias_grad(g)

    return Node(y, (x, W, b), bw, f"conv_transpose{nsp}d")


def conv2d(x, W, b, stride: int = 2) -> Node:
    if as_node(W).value.ndim != 4:
        raise ValueError("conv2d expects a (C_out, C_in, k, k) kernel")
    return conv(x, W, b, stride)


def conv3d(x, W, b, stride: int = 2) -> Node:
    if as_node(W).value.ndim != 5:
        raise ValueError("conv3d expects a (C_out, C_in, k, k, k) kernel")
    return conv(x, W, b, stride)


def transposed_conv2d(x, W, b, stride: int = 2) -> Node:
    if as_node(W).value.ndim != 4:
        raise ValueError("transposed_conv2d expects a (C_in, C_out, k, k) kernel")
    return conv_transpose(x, W, b, stride)


def transposed_conv3d(x, W, b, stride: int = 2) -> Node:
    if as_node(W).value.ndim != 5:
        raise ValueError("transposed_conv3d expects a (C_in, C_out, k, k, k) kernel")
    return conv_transpose(x, W, b, stride)


# ------------------------------------------------------------------ batchnorm


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, state: BatchNormState, train: bool = True, update_stats: bool = True) -> Node:
    """Per-channel normalization over the batch and spatial axes."""
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    xv = x.value
    c = xv.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0,) + tuple(range(2, xv.ndim))
    bshape = (1, c) + (1,) * (xv.ndim - 2)
    dtype = xv.dtype
    if train:
        if xv.shape[0] < 2:
            raise ValueError("batchnorm: training mode needs a batch of at least 2")
        m = xv.size // c
        mu = np.mean(xv, axis=axes, dtype=np.float64)
        var = np.mean((xv - mu.reshape(bshape)) ** 2, axis=axes, dtype=np.float64)
        if update_stats:
            mom = state.momentum
            state.running_mean = (mom * state.running_mean + (1 - mom) * mu).astype(np.float32)
            unbiased = var * m / max(m - 1, 1)
            state.running_var = (mom * state.running_var + (1 - mom) * unbiased).astype(np.float32)
    else:
        mu = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    inv = (1.0 / np.sqrt(var + state.eps)).astype(dtype)
    xhat = (xv - mu.astype(dtype).reshape(bshape)) * inv.reshape(bshape)
    gv = gamma.value
    y = xhat * gv.reshape(bshape) + beta.value.reshape(bshape)

    def bw(g):
        gbeta = _sum64(g, axis=axes)
        ggamma = _sum64(g * xhat, axis=axes)
        if not train:
            return g * (gv * inv).reshape(bshape), ggamma, gbeta
        m = xv.size // c
        gx = (gv * inv).reshape(bshape) / m * (
            m * g - gbeta.reshape(bshape) - xhat * ggamma.reshape(bshape)
        )
        return gx.astype(dtype), ggamma, gbeta

    return Node(y, (x, gamma, beta), bw, "batchnorm")
