"""Differentiable operations used by the CGC layer and the desk-scale networks.

Each public function takes tensors (or plain arrays) and returns a
:class:`~cgc.tensor.Tensor`; the matching ``*_OP`` constant is the raw
:class:`~cgc.tensor.DualOp`, which is what :func:`cgc.gradcheck.gradcheck`
probes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DualOp, Tensor, apply, unbroadcast


def _pair(value, rank: int, what: str) -> tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * rank
    value = tuple(int(v) for v in value)
    if len(value) != rank:
        raise ValueError(f"{what} needs {rank} entries, got {value}")
    return value


# ---------------------------------------------------------------------------
# pointwise

def _add_fwd(a, b):
    return a + b, (np.shape(a), np.shape(b))


def _add_vjp(saved, g):
    sa, sb = saved
    return unbroadcast(g, sa), unbroadcast(g, sb)


def _mul_fwd(a, b):
    return a * b, (a, b)


def _mul_vjp(saved, g):
    a, b = saved
    return unbroadcast(g * b, np.shape(a)), unbroadcast(g * a, np.shape(b))


def _scale_fwd(x, factor):
    return x * np.asarray(factor, dtype=x.dtype), factor


def _scale_vjp(factor, g):
    return (g * np.asarray(factor, dtype=g.dtype),)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_fwd(x):
    # keep saturated outputs strictly inside (0, 1); the shift is at most one ulp
    fi = np.finfo(x.dtype)
    s = np.clip(_sigmoid(x), fi.tiny, 1.0 - fi.epsneg)
    return s, s


def _sigmoid_vjp(s, g):
    return (g * s * (1.0 - s),)


def _relu_fwd(x):
    return np.maximum(x, 0), x >= 0


def _relu_vjp(mask, g):
    # Subgradient 1 at exactly zero; zero-initialised gate norms emit exact
    # zeros and would otherwise never receive a gradient.
    return (g * mask,)


ADD_OP = DualOp("add", _add_fwd, _add_vjp)
MUL_OP = DualOp("mul", _mul_fwd, _mul_vjp)
SCALE_OP = DualOp("scale", _scale_fwd, _scale_vjp)
SIGMOID_OP = DualOp("sigmoid", _sigmoid_fwd, _sigmoid_vjp)
RELU_OP = DualOp("relu", _relu_fwd, _relu_vjp)


def _check_broadcast(a, b, name):
    try:
        np.broadcast_shapes(np.shape(a), np.shape(b))
    except ValueError:
        raise ValueError(f"{name}: shapes {np.shape(a)} and {np.shape(b)} do not broadcast") from None


def add(a, b) -> Tensor:
    _check_broadcast(_data(a), _data(b), "add")
    return apply(ADD_OP, a, b)


def mul(a, b) -> Tensor:
    _check_broadcast(_data(a), _data(b), "mul")
    return apply(MUL_OP, a, b)


def scale(x, factor: float) -> Tensor:
    return apply(SCALE_OP, x, factor=factor)


def sigmoid(x) -> Tensor:
    return apply(SIGMOID_OP, x)


def relu(x) -> Tensor:
    return apply(RELU_OP, x)


def elementwise(x, f: str, y=None) -> Tensor:
    """Dispatch by name: ``sigmoid``, ``relu`` (unary) or ``mul``, ``add`` (binary)."""
    if f in ("sigmoid", "relu"):
        if y is not None:
            raise ValueError(f"{f} is unary")
        return sigmoid(x) if f == "sigmoid" else relu(x)
    if f in ("mul", "add"):
        if y is None:
            raise ValueError(f"{f} needs a second operand")
        return mul(x, y) if f == "mul" else add(x, y)
    raise ValueError(f"unknown elementwise function {f!r}")


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# shape plumbing

def _reshape_fwd(x, shape):
    return x.reshape(shape), x.shape


def _reshape_vjp(in_shape, g):
    return (g.reshape(in_shape),)


def _transpose_fwd(x, axes):
    return np.ascontiguousarray(np.transpose(x, axes)), axes


def _transpose_vjp(axes, g):
    return (np.ascontiguousarray(np.transpose(g, np.argsort(axes))),)


def _sum_fwd(x, axis, keepdims):
    return np.sum(x, axis=axis, keepdims=keepdims), (x.shape, axis, keepdims)


def _sum_vjp(saved, g):
    shape, axis, keepdims = saved
    if not keepdims and axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def _mean_fwd(x, axis, keepdims):
    out = np.mean(x, axis=axis, keepdims=keepdims)
    return out, (x.shape, axis, keepdims, x.size // max(out.size, 1))


def _mean_vjp(saved, g):
    shape, axis, keepdims, count = saved
    if not keepdims and axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, shape).copy(),)


def _broadcast_fwd(x, shape):
    return np.broadcast_to(x, shape).copy(), x.shape


def _broadcast_vjp(in_shape, g):
    return (unbroadcast(g, in_shape),)


def _pad_fwd(x, axis, length):
    widths = [(0, 0)] * x.ndim
    widths[axis] = (0, length - x.shape[axis])
    return np.pad(x, widths), (axis, x.shape[axis])


def _pad_vjp(saved, g):
    axis, n = saved
    index = [slice(None)] * g.ndim
    index[axis] = slice(0, n)
    return (g[tuple(index)].copy(),)


RESHAPE_OP = DualOp("reshape", _reshape_fwd, _reshape_vjp)
TRANSPOSE_OP = DualOp("transpose", _transpose_fwd, _transpose_vjp)
SUM_OP = DualOp("sum", _sum_fwd, _sum_vjp)
MEAN_OP = DualOp("mean", _mean_fwd, _mean_vjp)
BROADCAST_OP = DualOp("broadcast_to", _broadcast_fwd, _broadcast_vjp)
PAD_OP = DualOp("pad_tail", _pad_fwd, _pad_vjp)


def reshape(x, shape) -> Tensor:
    return apply(RESHAPE_OP, x, shape=tuple(shape))


def transpose(x, axes) -> Tensor:
    return apply(TRANSPOSE_OP, x, axes=tuple(axes))


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    return apply(SUM_OP, x, axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    return apply(MEAN_OP, x, axis=axis, keepdims=keepdims)


def broadcast_to(x, shape) -> Tensor:
    return apply(BROADCAST_OP, x, shape=tuple(shape))


def pad_tail(x, axis: int, length: int) -> Tensor:
    """Zero-pad ``axis`` at its end up to ``length`` (no-op if already that long)."""
    n = _data(x).shape[axis]
    if length < n:
        raise ValueError(f"pad_tail: axis {axis} already has {n} > {length} entries")
    if length == n:
        return x if isinstance(x, Tensor) else Tensor(x)
    return apply(PAD_OP, x, axis=axis, length=length)


# ---------------------------------------------------------------------------
# matmul and grouped linear

def _matmul_fwd(a, b):
    return np.matmul(a, b), (a, b)


def _matmul_vjp(saved, g):
    a, b = saved
    da = np.matmul(g, np.swapaxes(b, -1, -2))
    db = np.matmul(np.swapaxes(a, -1, -2), g)
    return unbroadcast(da, a.shape), unbroadcast(db, b.shape)


MATMUL_OP = DualOp("matmul", _matmul_fwd, _matmul_vjp)


def matmul(a, b) -> Tensor:
    sa, sb = _data(a).shape, _data(b).shape
    if len(sa) < 2 or len(sb) < 2 or sa[-1] != sb[-2]:
        raise ValueError(f"matmul: inner extents differ ({sa} @ {sb})")
    return apply(MATMUL_OP, a, b)


def _grouped_linear_fwd(x, wg, g):
    lead = x.shape[:-1]
    cg, og = wg.shape
    xr = x.reshape(*lead, g, cg)
    y = np.matmul(xr, wg)
    return y.reshape(*lead, g * og), (xr, wg, x.shape)


def _grouped_linear_vjp(saved, grad):
    xr, wg, x_shape = saved
    cg, og = wg.shape
    gr = grad.reshape(*xr.shape[:-1], og)
    dx = np.matmul(gr, wg.T).reshape(x_shape)
    dw = xr.reshape(-1, cg).T @ gr.reshape(-1, og)
    return dx, dw


GROUPED_LINEAR_OP = DualOp("grouped_linear", _grouped_linear_fwd, _grouped_linear_vjp)


def grouped_linear(x, wg, g: int) -> Tensor:
    """Bias-free grouped linear map on the last axis with one weight shared by all groups.

    Output group ``j`` is input group ``j`` times ``wg``; ``wg`` has shape
    ``(c/g, o/g)``.
    """
    c = _data(x).shape[-1]
    cg, og = _data(wg).shape
    if g < 1 or c % g:
        raise ValueError(f"grouped_linear: {c} input channels not divisible by g={g}")
    if cg * g != c:
        raise ValueError(f"grouped_linear: weight rows {cg} x g={g} != {c} input channels")
    return apply(GROUPED_LINEAR_OP, x, wg, g=g)


# ---------------------------------------------------------------------------
# convolution

def _conv_core(x, w, stride, padding, groups):
    """2D cross-correlation; ``w`` is (o, cg, k1, k2) or per-sample (b, o, cg, k1, k2)."""
    b, c, H, W = x.shape
    per_sample = w.ndim == 5
    o, cg, k1, k2 = w.shape[-4:]
    s1, s2 = stride
    p1, p2 = padding
    G = groups
    og = o // G
    oh = (H + 2 * p1 - k1) // s1 + 1
    ow = (W + 2 * p2 - k2) // s2 + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p1, p1), (p2, p2))) if (p1 or p2) else x
    win = sliding_window_view(xp, (k1, k2), axis=(2, 3))
    win = win[:, :, : (oh - 1) * s1 + 1 : s1, : (ow - 1) * s2 + 1 : s2]
    K = cg * k1 * k2
    cols = (win.reshape(b, G, cg, oh, ow, k1, k2)
               .transpose(0, 1, 3, 4, 2, 5, 6)
               .reshape(b, G, oh * ow, K))
    wb = w if per_sample else np.broadcast_to(w, (b,) + w.shape)
    # Shared and per-sample kernels take the same materialised layout so both
    # paths reduce in the same order.
    wm = np.ascontiguousarray(wb.reshape(b, G, og, K).transpose(0, 1, 3, 2))
    out = np.matmul(cols, wm)
    y = np.ascontiguousarray(out.transpose(0, 1, 3, 2).reshape(b, o, oh, ow))
    saved = (cols, wm, x.shape, xp.shape, w.shape, per_sample, stride, padding, G, (oh, ow))
    return y, saved


def _conv_core_vjp(saved, grad):
    cols, wm, x_shape, xp_shape, w_shape, per_sample, stride, padding, G, (oh, ow) = saved
    b, c, H, W = x_shape
    o, cg, k1, k2 = w_shape[-4:]
    og = o // G
    s1, s2 = stride
    p1, p2 = padding
    g = grad.reshape(b, G, og, oh * ow).transpose(0, 1, 3, 2)
    dwm = np.matmul(cols.transpose(0, 1, 3, 2), g)
    dw = dwm.transpose(0, 1, 3, 2).reshape(b, o, cg, k1, k2)
    if not per_sample:
        dw = dw.sum(axis=0)
    dcols = np.matmul(g, wm.transpose(0, 1, 3, 2))
    dcols = (dcols.reshape(b, G, oh, ow, cg, k1, k2)
                  .transpose(0, 1, 4, 2, 3, 5, 6)
                  .reshape(b, c, oh, ow, k1, k2))
    dxp = np.zeros(xp_shape, dtype=grad.dtype)
    for i in range(k1):
        for j in range(k2):
            dxp[:, :, i : i + (oh - 1) * s1 + 1 : s1, j : j + (ow - 1) * s2 + 1 : s2] += dcols[..., i, j]
    dx = dxp[:, :, p1 : p1 + H, p2 : p2 + W]
    return np.ascontiguousarray(dx), dw


def _conv_fwd(x, w, stride, padding, groups):
    if x.ndim == 3:
        x4 = x[:, :, None, :]
        w4 = w[..., None, :]
        y, saved = _conv_core(x4, w4, (1, stride[0]), (0, padding[0]), groups)
        return y[:, :, 0, :], (saved, True)
    y, saved = _conv_core(x, w, stride, padding, groups)
    return y, (saved, False)


def _conv_vjp(saved, grad):
    core, is_1d = saved
    if is_1d:
        dx, dw = _conv_core_vjp(core, grad[:, :, None, :])
        return dx[:, :, 0, :], dw[..., 0, :]
    return _conv_core_vjp(core, grad)


CONV_OP = DualOp("conv_nd", _conv_fwd, _conv_vjp)


def conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv_nd(x, w, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Zero-padded cross-correlation over 1 or 2 spatial axes.

    ``w`` is ``(o, c/groups, *kernel)`` for a shared kernel or
    ``(b, o, c/groups, *kernel)`` for one kernel per sample.
    """
    xs, ws = _data(x).shape, _data(w).shape
    rank = len(xs) - 2
    if rank not in (1, 2):
        raise ValueError(f"conv_nd: input must be (b, c, *spatial) with 1 or 2 spatial axes, got {xs}")
    per_sample = len(ws) == len(xs) + 1
    if len(ws) not in (len(xs), len(xs) + 1):
        raise ValueError(f"conv_nd: weight rank {len(ws)} does not fit input rank {len(xs)}")
    if per_sample and ws[0] != xs[0]:
        raise ValueError(f"conv_nd: per-sample weight batch axis (axis 0) is {ws[0]}, input batch is {xs[0]}")
    o, cg = ws[-2 - rank], ws[-1 - rank]
    kernel = ws[-rank:]
    c = xs[1]
    if groups < 1 or c % groups:
        raise ValueError(f"conv_nd: input channel axis (axis 1) has {c} channels, not divisible by groups={groups}")
    if o % groups:
        raise ValueError(f"conv_nd: output channel axis has {o} channels, not divisible by groups={groups}")
    if cg * groups != c:
        raise ValueError(
            f"conv_nd: input channel axis (axis 1) has {c} channels but weight expects {cg} x {groups} groups")
    stride = _pair(stride, rank, "stride")
    padding = _pair(padding, rank, "padding")
    for ax in range(rank):
        n = xs[2 + ax]
        if conv_out_extent(n, kernel[ax], stride[ax], padding[ax]) < 1:
            raise ValueError(
                f"conv_nd: spatial axis {2 + ax} of extent {n} (padding {padding[ax]}) is smaller than kernel {kernel[ax]}")
    return apply(CONV_OP, x, w, stride=stride, padding=padding, groups=groups)


# ---------------------------------------------------------------------------
# adaptive pooling

def pool_bins(n: int, m: int) -> list[tuple[int, int]]:
    """Input index ranges for ``m`` adaptive bins over an axis of length ``n``."""
    return [((i * n) // m, -((-(i + 1) * n) // m)) for i in range(m)]


def _pool_fwd(x, out_size, kind):
    is_1d = x.ndim == 3
    if is_1d:
        x = x[:, :, None, :]
        out_size = (1,) + tuple(out_size)
    b, c, H, W = x.shape
    oh, ow = out_size
    if H % oh == 0 and W % ow == 0:
        kh, kw = H // oh, W // ow
        blocks = x.reshape(b, c, oh, kh, ow, kw).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, kh * kw)
        if kind == "avg":
            y = blocks.mean(axis=-1)
            saved = ("even", kind, None, x.shape, (kh, kw))
        else:
            idx = blocks.argmax(axis=-1)
            y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
            saved = ("even", kind, idx, x.shape, (kh, kw))
    else:
        rows, cols_ = pool_bins(H, oh), pool_bins(W, ow)
        y = np.empty((b, c, oh, ow), dtype=x.dtype)
        idx = {}
        for i, (hs, he) in enumerate(rows):
            for j, (ws, we) in enumerate(cols_):
                win = x[:, :, hs:he, ws:we]
                if kind == "avg":
                    y[:, :, i, j] = win.mean(axis=(2, 3))
                else:
                    flat = win.reshape(b, c, -1)
                    k = flat.argmax(axis=-1)
                    idx[i, j] = k
                    y[:, :, i, j] = np.take_along_axis(flat, k[..., None], axis=-1)[..., 0]
        saved = ("bins", kind, idx, x.shape, (rows, cols_))
    if is_1d:
        y = y[:, :, 0, :]
    return y, (saved, is_1d)


def _pool_vjp(saved, g):
    (layout, kind, idx, shape, geom), is_1d = saved
    if is_1d:
        g = g[:, :, None, :]
    b, c, H, W = shape
    oh, ow = g.shape[2:]
    if layout == "even":
        kh, kw = geom
        if kind == "avg":
            blocks = np.broadcast_to((g / (kh * kw))[..., None], (b, c, oh, ow, kh * kw))
        else:
            blocks = np.zeros((b, c, oh, ow, kh * kw), dtype=g.dtype)
            np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
        dx = blocks.reshape(b, c, oh, ow, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
        dx = np.ascontiguousarray(dx)
    else:
        rows, cols_ = geom
        dx = np.zeros(shape, dtype=g.dtype)
        for i, (hs, he) in enumerate(rows):
            for j, (ws, we) in enumerate(cols_):
                if kind == "avg":
                    dx[:, :, hs:he, ws:we] += (g[:, :, i, j] / ((he - hs) * (we - ws)))[..., None, None]
                else:
                    flat = np.zeros((b, c, (he - hs) * (we - ws)), dtype=g.dtype)
                    np.put_along_axis(flat, idx[i, j][..., None], g[:, :, i, j][..., None], axis=-1)
                    dx[:, :, hs:he, ws:we] += flat.reshape(b, c, he - hs, we - ws)
    if is_1d:
        dx = dx[:, :, 0, :]
    return (dx,)


POOL_OP = DualOp("adaptive_pool", _pool_fwd, _pool_vjp)


def adaptive_pool(x, out_spatial, kind: str = "avg") -> Tensor:
    """Adaptive average/max pooling; bin ``i`` covers ``[floor(i*n/m), ceil((i+1)*n/m))``.

    Max pooling routes the gradient to the first maximal element in scan order.
    """
    xs = _data(x).shape
    rank = len(xs) - 2
    if rank not in (1, 2):
        raise ValueError(f"adaptive_pool: expected 1 or 2 spatial axes, got shape {xs}")
    out_spatial = _pair(out_spatial, rank, "out_spatial")
    if any(m < 1 for m in out_spatial):
        raise ValueError(f"adaptive_pool: output extents must be >= 1, got {out_spatial}")
    if kind not in ("avg", "max"):
        raise ValueError(f"adaptive_pool: kind must be 'avg' or 'max', got {kind!r}")
    return apply(POOL_OP, x, out_size=out_spatial, kind=kind)


# ---------------------------------------------------------------------------
# normalization

@dataclass
class RunningStats:
    """Exponential moving averages of batch mean and (unbiased) variance."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, n: int, dtype=np.float64, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(n, dtype=dtype), np.ones(n, dtype=dtype), momentum)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1 - m) * self.mean + m * batch_mean.astype(self.mean.dtype)
        self.var = (1 - m) * self.var + m * batch_var.astype(self.var.dtype)


def _norm_fwd(x, gamma, beta, reduce_axes, param_axis, mean, var, eps):
    bshape = [1] * x.ndim
    bshape[param_axis] = -1
    gb = gamma.reshape(bshape)
    if mean is None:
        mu = x.mean(axis=reduce_axes, keepdims=True)
        var_ = x.var(axis=reduce_axes, keepdims=True)
        live = True
    else:
        mu = mean.reshape(bshape).astype(x.dtype)
        var_ = var.reshape(bshape).astype(x.dtype)
        live = False
    inv = 1.0 / np.sqrt(var_ + eps)
    xhat = (x - mu) * inv
    y = xhat * gb + beta.reshape(bshape)
    return y, (xhat, inv, gb, reduce_axes, param_axis, live)


def _norm_vjp(saved, g):
    xhat, inv, gb, reduce_axes, param_axis, live = saved
    other = tuple(a for a in range(g.ndim) if a != param_axis)
    dgamma = (g * xhat).sum(axis=other)
    dbeta = g.sum(axis=other)
    dxhat = g * gb
    if live:
        dx = inv * (dxhat
                    - dxhat.mean(axis=reduce_axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=reduce_axes, keepdims=True))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta


NORM_OP = DualOp("affine_norm", _norm_fwd, _norm_vjp)


def affine_norm(x, gamma, beta, *, reduce_axes: Sequence[int], param_axis: int,
                mode: str = "train", running: RunningStats | None = None,
                eps: float = 1e-5) -> Tensor:
    """``(x - mean) / sqrt(var + eps) * gamma + beta``.

    Statistics are taken over ``reduce_axes``; ``gamma``/``beta`` run along
    ``param_axis``.  When the batch axis is reduced (batch statistics), train
    mode uses the batch and folds it into ``running``; eval mode reads
    ``running``.  Per-sample statistics ignore ``mode``.
    """
    xd = _data(x)
    reduce_axes = tuple(sorted(a % xd.ndim for a in reduce_axes))
    param_axis %= xd.ndim
    n = xd.shape[param_axis]
    if _data(gamma).shape != (n,) or _data(beta).shape != (n,):
        raise ValueError(
            f"affine_norm: gamma/beta must have shape ({n},) to match axis {param_axis}, "
            f"got {_data(gamma).shape} and {_data(beta).shape}")
    if eps <= 0:
        raise ValueError("affine_norm: eps must be positive")
    if mode not in ("train", "eval"):
        raise ValueError(f"affine_norm: mode must be 'train' or 'eval', got {mode!r}")
    batch_stats = 0 in reduce_axes
    if batch_stats and mode == "eval":
        if running is None:
            raise ValueError("affine_norm: eval mode needs running statistics, none were initialised")
        return apply(NORM_OP, x, gamma, beta, reduce_axes=reduce_axes, param_axis=param_axis,
                     mean=running.mean, var=running.var, eps=eps)
    out = apply(NORM_OP, x, gamma, beta, reduce_axes=reduce_axes, param_axis=param_axis,
                mean=None, var=None, eps=eps)
    if batch_stats and running is not None:
        count = xd.size // n
        bm = xd.mean(axis=reduce_axes)
        bv = xd.var(axis=reduce_axes) * (count / max(count - 1, 1))
        running.update(bm, bv)
    return out


# ---------------------------------------------------------------------------
# loss

def _xent_fwd(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    return np.asarray(loss, dtype=logits.dtype), (np.exp(logp), labels)


def _xent_vjp(saved, g):
    probs, labels = saved
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return d * (g / n), None


XENT_OP = DualOp("cross_entropy", _xent_fwd, _xent_vjp)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of ``(n, classes)`` logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    shape = _data(logits).shape
    if len(shape) != 2 or labels.shape != (shape[0],):
        raise ValueError(f"cross_entropy: logits {shape} and labels {labels.shape} disagree")
    return apply(XENT_OP, logits, labels)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    return _sigmoid(np.asarray(x, dtype=np.float64))


def logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


