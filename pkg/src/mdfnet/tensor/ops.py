"""Differentiable primitives.

Feature maps use batch x channels x height x width layout. Convolutions are
im2col-based correlations; ``deconv2d`` is implemented as the exact adjoint of
``conv2d`` so the two share the same index arithmetic.
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DTYPE, DimensionError, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# element-wise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor._from_op(ad * bd, (a, b), bw, "mul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if (xd <= 0).any():
        raise DimensionError("log of non-positive value")
    return Tensor._from_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), bw, "log_softmax")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis), 1.0 / float(n))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def flatten(x: Tensor, start_dim: int = 1) -> Tensor:
    lead = x.shape[:start_dim]
    return reshape(x, tuple(lead) + (-1,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for i in range(len(tensors)):
            idx[ax] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(idx)])
        return parts

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather ``x[index]`` along the first axis (indices may repeat)."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._from_op(x.data[index], (x,), bw, "take_rows")


def select(x: Tensor, index: Tuple) -> Tensor:
    """Basic/advanced indexing with gradient scatter (e.g. ``x[rows, cols]``)."""
    shape = x.shape
    picked = np.asarray(x.data[index])

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, np.reshape(g, picked.shape))
        return (out,)

    return Tensor._from_op(picked, (x,), bw, "select")


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return Tensor._from_op(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return Tensor._from_op(out, parents, bw, "linear")


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding id out of range [0, {table.shape[0]})")
    return take_rows(table, ids)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def deconv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {Cw}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}+2*{padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # win: B, C, Ho, Wo, kh, kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(O, -1).T
    return out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)


def _conv_backward_input(g: np.ndarray, w: np.ndarray, stride: int, padding: int,
                         in_hw: Tuple[int, int]) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input (== transposed convolution of ``g``)."""
    B, O, Ho, Wo = g.shape
    O2, C, kh, kw = w.shape
    if O != O2:
        raise DimensionError(f"channel mismatch: {O} vs kernel {O2}")
    H, W = in_hw
    dxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=DTYPE)
    # (B, Ho, Wo, O) @ (O, C*kh*kw) -> per-position patch contributions
    patches = (g.transpose(0, 2, 3, 1).reshape(-1, O) @ w.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += \
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, padding:padding + H, padding:padding + W]


def _conv_backward_weight(g: np.ndarray, x: np.ndarray, stride: int, padding: int,
                          kshape: Tuple[int, int]) -> np.ndarray:
    B, O, Ho, Wo = g.shape
    C = x.shape[1]
    kh, kw = kshape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    gw = g.transpose(0, 2, 3, 1).reshape(-1, O).T @ cols
    return gw.reshape(O, C, kh, kw)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation: ``x`` (B,Cin,H,W), ``weight`` (Cout,Cin,kh,kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D tensors, got {x.shape} and {weight.shape}")
    xd, wd = x.data, weight.data
    out = _conv_forward(xd, wd, stride, padding)
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)
    hw = xd.shape[2:]

    def bw(g):
        gx = _conv_backward_input(g, wd, stride, padding, hw) if x.requires_grad else None
        gw = _conv_backward_weight(g, xd, stride, padding, wd.shape[2:]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, bw, "conv2d")


def deconv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
             stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution: ``x`` (B,Cin,H,W), ``weight`` (Cin,Cout,kh,kw).

    Output spatial size is ``(H-1)*stride - 2*padding + kh``. The forward map
    is the input-gradient of ``conv2d`` with the same kernel.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"deconv2d expects 4-D tensors, got {x.shape} and {weight.shape}")
    if stride < 1:
        raise DimensionError("deconv2d: stride must be >= 1")
    xd, wd = x.data, weight.data
    if xd.shape[1] != wd.shape[0]:
        raise DimensionError(f"deconv2d: input has {xd.shape[1]} channels, kernel expects {wd.shape[0]}")
    kh, kw = wd.shape[2:]
    Ho = deconv_output_size(xd.shape[2], kh, stride, padding)
    Wo = deconv_output_size(xd.shape[3], kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise DimensionError("deconv2d: non-positive output size")
    out = _conv_backward_input(xd, wd, stride, padding, (Ho, Wo))
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)

    def bw(g):
        gx = _conv_forward(g, wd, stride, padding) if x.requires_grad else None
        gw = _conv_backward_weight(xd, g, stride, padding, (kh, kw)) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, bw, "deconv2d")


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    stride = stride or kernel
    B, C, H, W = x.shape
    Ho, Wo = conv_output_size(H, kernel, stride, 0), conv_output_size(W, kernel, stride, 0)
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    flat = win.reshape(B, C, Ho, Wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dx = np.zeros((B, C, H, W), dtype=DTYPE)
        di, dj = np.divmod(arg, kernel)
        bi, ci, hi, wi = np.indices((B, C, Ho, Wo))
        np.add.at(dx, (bi, ci, hi * stride + di, wi * stride + dj), g)
        return (dx,)

    return Tensor._from_op(out, (x,), bw, "maxpool2d")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")
