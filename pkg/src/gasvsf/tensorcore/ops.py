"""Differentiable tensor operations with hand-written adjoints.

Every op takes and returns :class:`Tensor` objects, produces a fresh buffer
(except :func:`reshape_view`) and records a backward closure on the active
tape. Convolutions use zero-filled padding; with the default padding of
``k // 2`` and stride 1 the output keeps the input extents.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, make_result

CE_EPS = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- shape ------------------------------------------------------------------

def reshape_view(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(n) for n in new_shape)
    if any(n < 1 for n in new_shape) or int(np.prod(new_shape)) != t.size:
        raise ShapeError(f"cannot view {t.shape} as {new_shape}: element count differs")
    old = t.shape
    return make_result(t.data.reshape(new_shape), [t], lambda g: [g.reshape(old)], "reshape_view")


def permute(t: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(t.data.transpose(axes))
    return make_result(out, [t], lambda g: [np.ascontiguousarray(g.transpose(inv))], "permute")


def frames_to_volume(t: Tensor, frames: int) -> Tensor:
    """(B*T, C, H, W) -> (B, C, H, W, T); frame-major batches."""
    bt, c, h, w = t.shape
    if frames < 1 or bt % frames:
        raise ShapeError(f"batch {bt} is not divisible by frame count {frames}")
    v = reshape_view(t, (bt // frames, frames, c, h, w))
    return permute(v, (0, 2, 3, 4, 1))


def volume_to_frames(t: Tensor) -> Tensor:
    b, c, h, w, frames = t.shape
    v = permute(t, (0, 4, 1, 2, 3))
    return reshape_view(v, (b * frames, c, h, w))


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in ts]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            res.append(np.ascontiguousarray(g[tuple(idx)]))
        return res

    return make_result(out, list(ts), backward, "concat")


def take(t: Tensor, index, axis: int = 0) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    out = np.take(t.data, index, axis=axis)
    shape, dtype = t.shape, t.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        # add.at accumulates sequentially in index order
        np.add.at(np.moveaxis(full, axis, 0), index.ravel(),
                  np.moveaxis(g, axis, 0).reshape((index.size,) + tuple(np.delete(shape, axis))))
        return [full]

    return make_result(out, [t], backward, "take")


# -- elementwise ------------------------------------------------------------

def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, [a, b],
                       lambda g: [_unbroadcast(g, sa), _unbroadcast(g, sb)], "add")


def elementwise_sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, [a, b],
                       lambda g: [_unbroadcast(g, sa), _unbroadcast(-g, sb)], "sub")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, [a, b],
                       lambda g: [_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)], "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * c, [a], lambda g: [g * c], "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), [x], lambda g: [g * mask], "relu")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split on sign so exp never overflows
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result(s, [x], lambda g: [g * s * (1 - s)], "sigmoid")


# -- reductions -------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    return make_result(np.array([x.data.sum()], dtype=dtype), [x],
                       lambda g: [np.full(shape, g.reshape(-1)[0], dtype=dtype)], "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    shape, dtype = x.shape, x.dtype
    return make_result(np.array([x.data.sum() / n], dtype=dtype), [x],
                       lambda g: [np.full(shape, g.reshape(-1)[0] / n, dtype=dtype)], "mean")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over every axis after (batch, channel)."""
    if x.data.ndim < 3:
        raise ShapeError("global_avg_pool expects (B, C, ...)")
    b, c = x.shape[:2]
    n = int(np.prod(x.shape[2:]))
    out = x.data.reshape(b, c, n).sum(axis=2) / n
    shape = x.shape

    def backward(g):
        return [np.broadcast_to((g / n).reshape(b, c, *([1] * (len(shape) - 2))), shape).copy()]

    return make_result(out, [x], backward, "global_avg_pool")


# -- dense ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make_result(ad @ bd, [a, b], lambda g: [g @ bd.T, ad.T @ g], "matmul")


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w.T + b with x (N, In), w (Out, In), b (Out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"fully_connected: x {x.shape}, w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"fully_connected: bias {b.shape}, expected ({w.shape[0]},)")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def backward(g):
        res = [g @ wd, g.T @ xd]
        if b is not None:
            res.append(g.sum(axis=0))
        return res

    inputs = [x, w] + ([b] if b is not None else [])
    return make_result(out, inputs, backward, "fully_connected")


# -- convolution ------------------------------------------------------------

def _convnd(x: Tensor, w: Tensor, b: Tensor | None, stride: tuple[int, ...], pad: tuple[int, ...], op: str) -> Tensor:
    nd = len(stride)
    xd, wd = x.data, w.data
    n, c = xd.shape[:2]
    co, ci = wd.shape[:2]
    ks = wd.shape[2:]
    if ci != c:
        raise ShapeError(f"{op}: input has {c} channels, kernel expects {ci}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"{op}: bias {b.shape}, expected ({co},)")
    spatial = xd.shape[2:]
    outs = tuple((s + 2 * p - k) // st + 1 for s, p, k, st in zip(spatial, pad, ks, stride))
    if any(o < 1 for o in outs):
        raise ShapeError(f"{op}: kernel {ks} too large for input {spatial}")
    xp = np.pad(xd, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    # im2col: cols[n, *out, c, *k]
    cols = np.empty((n, *outs, c, *ks), dtype=xd.dtype)
    chan_last = (0,) + tuple(range(2, 2 + nd)) + (1,)
    for kidx in itertools.product(*[range(k) for k in ks]):
        sl = tuple(slice(k0, k0 + st * o, st) for k0, st, o in zip(kidx, stride, outs))
        cols[(Ellipsis,) + kidx] = xp[(slice(None), slice(None)) + sl].transpose(chan_last)
    rows = int(n * np.prod(outs))
    cmat = cols.reshape(rows, -1)
    wmat = wd.reshape(co, -1)
    om = cmat @ wmat.T
    if b is not None:
        om = om + b.data
    out = np.ascontiguousarray(om.reshape(n, *outs, co).transpose((0, nd + 1) + tuple(range(1, nd + 1))))

    def backward(g):
        gm = g.transpose((0,) + tuple(range(2, 2 + nd)) + (1,)).reshape(rows, co)
        dw = (gm.T @ cmat).reshape(wd.shape)
        dcols = (gm @ wmat).reshape(n, *outs, c, *ks)
        dxp = np.zeros(xp.shape, dtype=xd.dtype)
        back = (0, nd + 1) + tuple(range(1, nd + 1))
        for kidx in itertools.product(*[range(k) for k in ks]):
            sl = tuple(slice(k0, k0 + st * o, st) for k0, st, o in zip(kidx, stride, outs))
            dxp[(slice(None), slice(None)) + sl] += dcols[(Ellipsis,) + kidx].transpose(back)
        crop = tuple(slice(p, p + s) for p, s in zip(pad, spatial))
        dx = np.ascontiguousarray(dxp[(slice(None), slice(None)) + crop])
        res = [dx, dw]
        if b is not None:
            res.append(gm.sum(axis=0))
        return res

    inputs = [x, w] + ([b] if b is not None else [])
    return make_result(out, inputs, backward, op)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects (N,C,H,W) and (Co,Ci,kh,kw), got {x.shape}, {w.shape}")
    kh, kw = w.shape[2:]
    pad = (kh // 2, kw // 2) if padding is None else (padding, padding)
    return _convnd(x, w, b, (stride, stride), pad, "conv2d")


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1, same-padded 3-D correlation over (H, W, T) of x (B, C, H, W, T)."""
    if x.data.ndim != 5 or w.data.ndim != 5:
        raise ShapeError(f"conv3d expects (B,C,H,W,T) and (Co,Ci,kh,kw,kt), got {x.shape}, {w.shape}")
    ks = w.shape[2:]
    if any(k % 2 == 0 for k in ks):
        raise ShapeError(f"conv3d kernel extents must be odd, got {ks}")
    return _convnd(x, w, b, (1, 1, 1), tuple(k // 2 for k in ks), "conv3d")


# -- losses -----------------------------------------------------------------

def smooth_l1(x: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise."""
    xd = x.data
    ax = np.abs(xd)
    small = ax < beta
    out = np.where(small, 0.5 * xd * xd / beta, ax - 0.5 * beta).astype(x.dtype)
    return make_result(out, [x], lambda g: [g * np.where(small, xd / beta, np.sign(xd))], "smooth_l1")


def binary_cross_entropy(p: Tensor, target) -> Tensor:
    """Elementwise -[y log p + (1-y) log(1-p)], p clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=p.dtype)
    if y.shape != p.shape:
        raise ShapeError(f"binary_cross_entropy: targets {y.shape} vs probabilities {p.shape}")
    pd = p.data
    pc = np.clip(pd, CE_EPS, 1 - CE_EPS)
    inside = (pd > CE_EPS) & (pd < 1 - CE_EPS)
    out = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))

    def backward(g):
        return [g * np.where(inside, (pc - y) / (pc * (1 - pc)), 0.0)]

    return make_result(out.astype(p.dtype), [p], backward, "binary_cross_entropy")
