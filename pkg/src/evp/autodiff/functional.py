"""Differentiable neural-network primitives on :class:`Tensor`.

All image tensors are NCHW.  Each function validates shapes up front and
registers its own backward rule, so none of them build sub-graphs out of
smaller ops.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, unbroadcast


def _require_rank(x: Tensor, rank: int, name: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{name} expects rank {rank}, got shape {x.shape}")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``y = x @ weight.T + bias`` over the last axis of ``x``."""
    if weight.ndim != 2:
        raise ShapeError(f"weight must be (Dout, Din), got {weight.shape}")
    dout, din = weight.shape
    if x.ndim < 1 or x.shape[-1] != din:
        raise ShapeError(f"linear: input last dim {x.shape[-1:]} != weight Din {din}")
    if bias is not None and bias.shape != (dout,):
        raise ShapeError(f"bias must be ({dout},), got {bias.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    w = weight.data
    out = x2 @ w.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g2 = g.reshape(-1, dout)
        grads = [(g2 @ w).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out.reshape(lead + (dout,)), parents, bw, "linear")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral conv output: ({size} + 2*{padding} - {kernel}) / {stride} + 1"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Parameters
    ----------
    x : Tensor (N, Cin, H, W)
    weight : Tensor (Cout, Cin, kh, kw), odd kh and kw
    bias : Tensor (Cout,), optional
    stride, padding : int
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(weight, 4, "conv2d weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias must be ({cout},), got {bias.shape}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    wd = weight.data

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        xm = x.data.reshape(n, cin, h * w)
        out = np.matmul(wd.reshape(cout, cin), xm).reshape(n, cout, h, w)

        def bw(g):
            gm = g.reshape(n, cout, h * w)
            gx = np.matmul(wd.reshape(cout, cin).T, gm).reshape(x.shape)
            gw = np.einsum("nop,ncp->oc", gm, xm).reshape(wd.shape)
            return [gx, gw] + ([gm.sum(axis=(0, 2))] if bias is not None else [])
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # win: (N, Cin, Ho, Wo, kh, kw)
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

        def bw(g):
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.einsum("nohw,oc->nchw", g, wd[:, :, i, j])
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            return [gx, gw] + ([g.sum(axis=(0, 2, 3))] if bias is not None else [])

    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.dtype)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, bw, "conv2d")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-group standardization followed by a channel affine."""
    _require_rank(x, 4, "group_norm input")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"{c} channels not divisible into {groups} groups")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must be ({c},)")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    centered = xg - mu
    var = (centered * centered).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv).reshape(x.shape)
    ga = gamma.data.reshape(1, c, 1, 1)
    out = xhat * ga + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = (g * ga).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        gx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
        return gx.reshape(x.shape), gg, gb

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "group_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), bw, "softmax")


def pool(x: Tensor, kind: str = "avg", scope="global", axis_mode: str = "spatial") -> Tensor:
    """Average or max pooling.

    ``scope`` is ``"global"`` or a ``(k, stride)`` window.  ``axis_mode``
    ``"spatial"`` pools over H, W; ``"channel"`` reduces C to 1 per pixel.
    Max pooling routes the gradient to the first maximal element in
    row-major order.
    """
    _require_rank(x, 4, "pool input")
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if axis_mode not in ("spatial", "channel"):
        raise ValueError(f"unknown axis_mode {axis_mode!r}")
    n, c, h, w = x.shape

    if scope == "global":
        if axis_mode == "spatial":
            flat = x.data.reshape(n, c, h * w)
            red_axis, out_shape = 2, (n, c, 1, 1)
        else:
            flat = x.data.transpose(0, 2, 3, 1).reshape(n, h * w, c)
            red_axis, out_shape = 2, (n, 1, h, w)
        return _reduce_flat(x, flat, kind, out_shape, axis_mode)

    if axis_mode != "spatial":
        raise ValueError("windowed pooling is spatial only")
    k, stride = scope
    if k > h or k > w:
        raise ShapeError(f"pool window {k} larger than input {h}x{w}")
    if (h - k) % stride or (w - k) % stride:
        raise ShapeError(f"pool window {k}/stride {stride} does not tile {h}x{w}")
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, k * k)
    if kind == "avg":
        out = flat.mean(axis=-1)

        def bw(g):
            gx = np.zeros(x.shape, dtype=x.dtype)
            share = g / (k * k)
            for i in range(k):
                for j in range(k):
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
            return (gx,)
    else:
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def bw(g):
            gx = np.zeros(x.shape, dtype=x.dtype)
            di, dj = np.divmod(arg, k)
            nn_, cc, hh, ww = np.indices(arg.shape)
            np.add.at(gx, (nn_, cc, hh * stride + di, ww * stride + dj), g)
            return (gx,)

    return Tensor._from_op(np.ascontiguousarray(out, dtype=x.dtype), (x,), bw, f"{kind}_pool")


def _reduce_flat(x: Tensor, flat: np.ndarray, kind: str, out_shape, axis_mode: str) -> Tensor:
    n, c, h, w = x.shape
    if kind == "avg":
        out = flat.mean(axis=2)
        count = flat.shape[2]

        def bw(g):
            return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)
    else:
        arg = flat.argmax(axis=2)
        out = np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]

        def bw(g):
            gflat = np.zeros(flat.shape, dtype=x.dtype)
            np.put_along_axis(gflat, arg[..., None], g.reshape(arg.shape)[..., None], axis=2)
            if axis_mode == "spatial":
                return (gflat.reshape(x.shape),)
            return (gflat.reshape(n, h, w, c).transpose(0, 3, 1, 2),)

    return Tensor._from_op(out.reshape(out_shape).astype(x.dtype, copy=False), (x,), bw, f"global_{kind}_pool")


def bilinear_matrix(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """(out_size, in_size) interpolation weights, half-pixel centers, edge clamp."""
    if out_size < 1 or in_size < 1:
        raise ShapeError("resize extents must be >= 1")
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    m = np.zeros((out_size, in_size), dtype=dtype)
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _require_rank(x, 4, "resize input")
    if out_h < 1 or out_w < 1:
        raise ShapeError("resize extents must be >= 1")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return Tensor._from_op(x.data, (x,), lambda g: (g,), "resize_identity")
    ah = bilinear_matrix(h, out_h, x.dtype)
    aw = bilinear_matrix(w, out_w, x.dtype)
    out = np.matmul(ah, np.matmul(x.data, aw.T))

    def bw(g):
        return (np.matmul(ah.T, np.matmul(g, aw)),)

    return Tensor._from_op(out, (x,), bw, "resize_bilinear")


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty list")
    ref = xs[0].shape
    axis = axis % len(ref)
    for t in xs[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat extents differ off axis {axis}: {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=axis)
    return Tensor._from_op(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    for t in xs:
        _require_rank(t, 4, "concat_channels input")
    return concat(xs, axis=1)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return Tensor._from_op(out, (x,), lambda g: (unbroadcast(g, src),), "broadcast_to")
