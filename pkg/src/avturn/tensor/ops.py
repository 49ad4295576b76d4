"""Differentiable primitives.

Broadcasting is limited to scalars and leading-batch dimensions: the shorter
operand's shape must equal the trailing dimensions of the longer one.
"""
from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, as_tensor, make_result


def _check_broadcast(op, a: np.ndarray, b: np.ndarray):
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(op, sa, sb)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# -- elementwise binary ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb
    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


# -- elementwise unary -----------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def log1p(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),), "log1p")


# -- reductions ------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return make_result(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum(a, axis, keepdims) * (1.0 / count)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError("softmax (empty axis)", a.shape)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return make_result(out, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError("log_softmax (empty axis)", a.shape)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)
    return make_result(out, (a,), bw, "log_softmax")


def layer_norm(x, gamma, beta, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize ``x`` along ``axis`` then apply learned scale ``gamma`` and shift ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = axis % x.ndim
    if gamma.shape != (x.shape[axis],) or beta.shape != (x.shape[axis],):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    xm = np.moveaxis(x.data, axis, -1)
    mu = xm.mean(axis=-1, keepdims=True)
    xc = xm - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = np.moveaxis(xhat * gamma.data + beta.data, -1, axis)
    n = xm.shape[-1]

    def bw(g):
        gm = np.moveaxis(g, axis, -1)
        lead = tuple(range(gm.ndim - 1))
        ggamma = (gm * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = gm.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = gm * gamma.data
            gx = inv / n * (n * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
            gx = np.moveaxis(gx, -1, axis)
        return gx, ggamma, gbeta
    return make_result(out, (x, gamma, beta), bw, "layer_norm")


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; ``a`` may carry leading batch dims, ``b`` is 2-D or batched alike."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.ndim == 2 and b.ndim > 2:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb
    return make_result(out, (a, b), bw, "matmul")


# -- shape ops -------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx) -> Tensor:
    """Basic slicing or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return make_result(np.array(out, copy=True), (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))
    return make_result(out, ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError("stack", *[t.shape for t in ts])
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))
    return make_result(out, ts, bw, "stack")


# -- sorting ---------------------------------------------------------------

def sort_with_permutation(a, axis: int = -1):
    """Sort along ``axis``; return ``(values, perm)`` with ``values = take(a, perm)``.

    The gradient scatters through the fixed permutation.
    """
    a = as_tensor(a)
    perm = np.argsort(a.data, axis=axis, kind="stable")
    out = np.take_along_axis(a.data, perm, axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, perm, g, axis=axis)
        return (full,)
    return make_result(out, (a,), bw, "sort"), perm


# -- convolution and pooling -----------------------------------------------

def _conv_nd(x: Tensor, w: Tensor, b, stride, padding, nd: int, op: str) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != nd + 2 or x.ndim < nd + 1 or x.shape[-1] != w.shape[nd]:
        raise ShapeError(op, x.shape, w.shape)
    stride = (stride,) * nd if isinstance(stride, int) else tuple(stride)
    padding = (padding,) * nd if isinstance(padding, int) else tuple(padding)
    ksize = w.shape[:nd]
    cin, cout = w.shape[nd], w.shape[nd + 1]
    lead = x.ndim - nd - 1
    sp_axes = tuple(range(lead, lead + nd))
    pad_width = [(0, 0)] * lead + [(p, p) for p in padding] + [(0, 0)]
    xp = np.pad(x.data, pad_width) if builtins.any(padding) else x.data
    for ax, k in zip(sp_axes, ksize):
        if xp.shape[ax] < k:
            raise ShapeError(op + " (input smaller than kernel)", x.shape, w.shape)
    win = sliding_window_view(xp, ksize, axis=sp_axes)
    sl = (slice(None),) * lead + tuple(slice(None, None, s) for s in stride)
    win = win[sl]
    out_sp = win.shape[lead:lead + nd]
    batch = win.shape[:lead]
    kprod = int(np.prod(ksize))
    cols = np.ascontiguousarray(win).reshape(-1, cin * kprod)
    wmat = np.moveaxis(w.data, nd, 0).reshape(cin * kprod, cout)
    out = cols @ wmat
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(op + " (bias)", b.shape, (cout,))
        out += b.data
        parents.append(b)
    out = out.reshape(batch + out_sp + (cout,))

    def bw(g):
        gflat = g.reshape(-1, cout)
        gw = None
        if w.requires_grad:
            gw = np.moveaxis((cols.T @ gflat).reshape((cin,) + ksize + (cout,)), 0, nd)
        gx = None
        if x.requires_grad:
            gcols = (gflat @ wmat.T).reshape(batch + out_sp + (cin,) + ksize)
            gxp = np.zeros(xp.shape)
            for offs in np.ndindex(*ksize):
                dst = (slice(None),) * lead + tuple(
                    slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_sp))
                gxp[dst] += gcols[(Ellipsis,) + offs]
            crop = (slice(None),) * lead + tuple(slice(p, p + n) for p, n in zip(padding, x.shape[lead:lead + nd]))
            gx = gxp[crop]
        grads = [gx, gw]
        if b is not None:
            grads.append(gflat.sum(axis=0) if b.requires_grad else None)
        return tuple(grads)
    return make_result(out, parents, bw, op)


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Channels-last 2-D convolution: x (..., H, W, Cin), w (kh, kw, Cin, Cout)."""
    return _conv_nd(x, w, b, stride, padding, 2, "conv2d")


def conv3d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Channels-last 3-D convolution: x (..., T, H, W, Cin), w (kt, kh, kw, Cin, Cout)."""
    return _conv_nd(x, w, b, stride, padding, 3, "conv3d")


def max_pool(x, kernel: Sequence[int], crop: bool = False) -> Tensor:
    """Non-overlapping max pooling over the spatial dims preceding the channel axis.

    With ``crop=False`` every spatial extent must be divisible by its kernel;
    otherwise trailing rows are dropped.
    """
    x = as_tensor(x)
    kernel = tuple(kernel)
    nd = len(kernel)
    lead = x.ndim - nd - 1
    if lead < 0:
        raise ShapeError("max_pool", x.shape, kernel)
    sp = x.shape[lead:lead + nd]
    if not crop and builtins.any(s % k for s, k in zip(sp, kernel)):
        raise ShapeError("max_pool (extent not divisible by kernel)", x.shape, kernel)
    outs = tuple(s // k for s, k in zip(sp, kernel))
    if builtins.any(o == 0 for o in outs):
        raise ShapeError("max_pool (input smaller than kernel)", x.shape, kernel)
    sl = (slice(None),) * lead + tuple(slice(0, o * k) for o, k in zip(outs, kernel))
    xc = x.data[sl]
    split = x.shape[:lead]
    for o, k in zip(outs, kernel):
        split += (o, k)
    split += (x.shape[-1],)
    r = xc.reshape(split)
    # (..., o1, k1, o2, k2, ..., C) -> (..., o1, o2, ..., C, k1*k2*...)
    kaxes = [lead + 2 * i + 1 for i in range(nd)]
    r = np.moveaxis(r, kaxes, list(range(r.ndim - nd, r.ndim)))
    r = r.reshape(r.shape[:r.ndim - nd] + (-1,))
    idx = r.argmax(axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gr = np.zeros(r.shape)
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        gr = gr.reshape(gr.shape[:-1] + kernel)
        gr = np.moveaxis(gr, list(range(gr.ndim - nd, gr.ndim)), kaxes)
        gfull = np.zeros(x.shape)
        gfull[sl] = gr.reshape(xc.shape)
        return (gfull,)
    return make_result(out, (x,), bw, "max_pool")
