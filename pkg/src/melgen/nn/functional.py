"""Differentiable operations over :class:`~melgen.nn.autograd.Tensor`.

Each op computes its forward value with NumPy, and, when recording, attaches
a closure mapping the output gradient to parent gradients.  Elementwise ops
broadcast like NumPy; gradients are summed back to the parent shapes.
Convolutions run on the selected kernel backend (compiled or reference).
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericFault
from . import kernels as K
from .autograd import Tensor, constant, make_node, recording, save_for_backward

LOG_2PI = math.log(2.0 * math.pi)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(np.asarray(x))


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands, casting bare Python scalars to the tensor's dtype so
    that float32 graphs are not silently promoted to float64."""
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return a, constant(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and isinstance(a, (int, float)):
        return constant(np.asarray(a, dtype=b.data.dtype)), b
    return _ensure(a), _ensure(b)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data + b.data
    if not recording(a, b):
        return constant(out, "add")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_node(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data - b.data
    if not recording(a, b):
        return constant(out, "sub")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_node(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data * b.data
    if not recording(a, b):
        return constant(out, "mul")
    ad, bd = save_for_backward(a.data, b.data)

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_node(out, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data / b.data
    if not recording(a, b):
        return constant(out, "div")
    ad, bd = save_for_backward(a.data, b.data)

    def bwd(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return make_node(out, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = _ensure(a)
    if not recording(a):
        return constant(-a.data, "neg")
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _ensure(a)
    out = np.exp(a.data)
    if not recording(a):
        return constant(out, "exp")
    (y,) = save_for_backward(out)
    return make_node(out, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = _ensure(a)
    out = np.log(a.data)
    if not recording(a):
        return constant(out, "log")
    (x,) = save_for_backward(a.data)
    return make_node(out, (a,), lambda g: (g / x,), "log")


def sqrt(a) -> Tensor:
    a = _ensure(a)
    out = np.sqrt(a.data)
    if not recording(a):
        return constant(out, "sqrt")
    (y,) = save_for_backward(out)
    return make_node(out, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def tanh(a) -> Tensor:
    a = _ensure(a)
    out = np.tanh(a.data)
    if not recording(a):
        return constant(out, "tanh")
    (y,) = save_for_backward(out)
    return make_node(out, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a) -> Tensor:
    a = _ensure(a)
    out = _sigmoid_np(a.data)
    if not recording(a):
        return constant(out, "sigmoid")
    (y,) = save_for_backward(out)
    return make_node(out, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _ensure(a)
    scale = np.where(a.data >= 0, a.data.dtype.type(1.0), a.data.dtype.type(slope))
    out = a.data * scale
    if not recording(a):
        return constant(out, "leaky_relu")
    (s,) = save_for_backward(scale)
    return make_node(out, (a,), lambda g: (g * s,), "leaky_relu")


def clip(a, lo: float, hi: float) -> Tensor:
    a = _ensure(a)
    out = np.clip(a.data, lo, hi)
    if not recording(a):
        return constant(out, "clip")
    (mask,) = save_for_backward((a.data >= lo) & (a.data <= hi))
    return make_node(out, (a,), lambda g: (g * mask,), "clip")


# ---------------------------------------------------------------------------
# Reductions and normalizers
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if not recording(a):
        return constant(out, "sum")
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        g_keep = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_keep, shape).copy(),)

    return make_node(out, (a,), bwd, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if not recording(a):
        return constant(out, "mean")
    shape = a.data.shape
    count = a.data.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        g_keep = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_keep / count, shape).copy(),)

    return make_node(out, (a,), bwd, "mean")


def logsumexp(a, axis: int = -1) -> Tensor:
    a = _ensure(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + m).squeeze(axis)
    if not recording(a):
        return constant(out, "logsumexp")
    (soft,) = save_for_backward(shifted / total)

    def bwd(g):
        return (np.expand_dims(g, axis) * soft,)

    return make_node(out, (a,), bwd, "logsumexp")


def softmax(a, axis: int = -1) -> Tensor:
    a = _ensure(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)
    if not recording(a):
        return constant(out, "softmax")
    (y,) = save_for_backward(out)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return make_node(out, (a,), bwd, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _ensure(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    if not recording(a):
        return constant(out, "log_softmax")
    (y,) = save_for_backward(out)

    def bwd(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), bwd, "log_softmax")


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    out = a.data.reshape(shape)
    if not recording(a):
        return constant(out, "reshape")
    orig = a.data.shape
    return make_node(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a, axes) -> Tensor:
    a = _ensure(a)
    out = np.transpose(a.data, axes)
    if not recording(a):
        return constant(out, "transpose")
    inverse = tuple(np.argsort(axes))
    return make_node(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def flip(a, axis: int) -> Tensor:
    a = _ensure(a)
    out = np.flip(a.data, axis)
    if not recording(a):
        return constant(out, "flip")
    return make_node(out, (a,), lambda g: (np.flip(g, axis),), "flip")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    if not recording(*tensors):
        return constant(out, "concat")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes[:-1])

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_node(out, tuple(tensors), bwd, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


def getitem(a, idx) -> Tensor:
    """Basic (slice/int/ellipsis) indexing only; views are copied."""
    a = _ensure(a)
    out = np.ascontiguousarray(a.data[idx])
    if not recording(a):
        return constant(out, "getitem")
    shape = a.data.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[idx] = g
        return (dx,)

    return make_node(out, (a,), bwd, "getitem")


def pad_constant(a, widths) -> Tensor:
    """Zero padding; ``widths`` is a per-axis list of (before, after)."""
    a = _ensure(a)
    out = np.pad(a.data, widths)
    if not recording(a):
        return constant(out, "pad_constant")
    sl = tuple(slice(b, out.shape[i] - e) for i, (b, e) in enumerate(widths))
    return make_node(out, (a,), lambda g: (np.ascontiguousarray(g[sl]),), "pad_constant")


def pad_reflect(a, widths) -> Tensor:
    """Reflection padding (mirror without repeating the edge sample)."""
    a = _ensure(a)
    for ax, (b, e) in enumerate(widths):
        if max(b, e) > a.data.shape[ax] - 1:
            raise ValueError(
                f"reflection pad {max(b, e)} too large for axis {ax} of extent "
                f"{a.data.shape[ax]}"
            )
    out = np.pad(a.data, widths, mode="reflect")
    if not recording(a):
        return constant(out, "pad_reflect")
    # map each padded cell to its source cell by padding the index grid
    src = np.pad(np.arange(a.data.size).reshape(a.data.shape), widths, mode="reflect")
    (src_flat,) = save_for_backward(src.ravel())
    size, shape = a.data.size, a.data.shape

    def bwd(g):
        dx = np.zeros(size, dtype=g.dtype)
        np.add.at(dx, src_flat, g.ravel())
        return (dx.reshape(shape),)

    return make_node(out, (a,), bwd, "pad_reflect")


# ---------------------------------------------------------------------------
# Linear algebra / lookup
# ---------------------------------------------------------------------------


def linear(x, w, b=None) -> Tensor:
    """``y = x @ w.T + b`` over the last axis of ``x``."""
    x, w = _ensure(x), _ensure(w)
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(f"linear: input dim {x.data.shape[-1]} != weight fan-in {w.data.shape[1]}")
    x2 = x.data.reshape(-1, x.data.shape[-1])
    out2 = x2 @ w.data.T
    if b is not None:
        b = _ensure(b)
        out2 = out2 + b.data
    out = out2.reshape(x.data.shape[:-1] + (w.data.shape[0],))
    parents = (x, w) if b is None else (x, w, b)
    if not recording(*parents):
        return constant(out, "linear")
    xd, wd = save_for_backward(x2, w.data)
    x_shape = x.data.shape

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        dx = (g2 @ wd).reshape(x_shape)
        dw = g2.T @ xd
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    return make_node(out, parents, bwd, "linear")


def embedding(ids, table) -> Tensor:
    """Row lookup; backward scatters into the selected rows only."""
    table = _ensure(table)
    ids = np.asarray(ids)
    n = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n}): got {ids.min()}..{ids.max()}")
    out = table.data[ids]
    if not recording(table):
        return constant(out, "embedding")
    shape = table.data.shape

    def bwd(g):
        dt = np.zeros(shape, dtype=g.dtype)
        np.add.at(dt, ids, g)
        return (dt,)

    return make_node(out, (table,), bwd, "embedding")


def gru_step(x, h, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """One gated-recurrent-unit update (gate order: reset, update, candidate).

        r = sigmoid(x Wr + h Ur + br)     z = sigmoid(x Wz + h Uz + bz)
        n = tanh(x Wn + r * (h Un + bn))  h' = (1 - z) * n + z * h
    """
    x, h = _ensure(x), _ensure(h)
    w_ih, w_hh, b_ih, b_hh = map(_ensure, (w_ih, w_hh, b_ih, b_hh))
    d = h.data.shape[-1]
    gi = x.data @ w_ih.data.T + b_ih.data
    gh = h.data @ w_hh.data.T + b_hh.data
    r = _sigmoid_np(gi[..., :d] + gh[..., :d])
    z = _sigmoid_np(gi[..., d:2 * d] + gh[..., d:2 * d])
    gh_n = gh[..., 2 * d:]
    n = np.tanh(gi[..., 2 * d:] + r * gh_n)
    out = (1.0 - z) * n + z * h.data
    parents = (x, h, w_ih, w_hh, b_ih, b_hh)
    if not recording(*parents):
        return constant(out, "gru_step")
    xd, hd, rs, zs, ns, ghn, wihd, whhd = save_for_backward(
        x.data, h.data, r, z, n, gh_n, w_ih.data, w_hh.data)

    def bwd(g):
        dn = g * (1.0 - zs)
        dz_pre = g * (hd - ns) * zs * (1.0 - zs)
        dn_pre = dn * (1.0 - ns * ns)
        dr_pre = dn_pre * ghn * rs * (1.0 - rs)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * rs], axis=-1)
        dx = dgi @ wihd
        dh = g * zs + dgh @ whhd
        flat_gi = dgi.reshape(-1, dgi.shape[-1])
        flat_gh = dgh.reshape(-1, dgh.shape[-1])
        dw_ih = flat_gi.T @ xd.reshape(-1, xd.shape[-1])
        dw_hh = flat_gh.T @ hd.reshape(-1, hd.shape[-1])
        return dx, dh, dw_ih, dw_hh, flat_gi.sum(axis=0), flat_gh.sum(axis=0)

    return make_node(out, parents, bwd, "gru_step")


def weight_norm(v, g, axes) -> Tensor:
    """Reparameterized weight ``g * v / ||v||`` with the norm over ``axes``."""
    v, g = _ensure(v), _ensure(g)
    norm_sq = sum_(mul(v, v), axis=axes, keepdims=True)
    if np.any(norm_sq.data == 0.0):
        raise NumericFault("weight_norm: zero-norm direction tensor")
    return mul(g, div(v, sqrt(norm_sq)))


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


def _conv2d_core(x, w, stride, dilation, groups) -> Tensor:
    """Valid cross-correlation on a pre-padded input."""
    sh, sw = stride
    dh, dw = dilation
    out = K.conv2d_forward(x.data, w.data, sh, sw, dh, dw, groups)
    if not recording(x, w):
        return constant(out, "conv2d")
    xd, wd = save_for_backward(x.data, w.data)
    _, _, h_in, w_in = x.data.shape
    kh, kw = w.data.shape[2], w.data.shape[3]

    def bwd(g):
        g = np.ascontiguousarray(g)
        dx = K.conv2d_grad_input(g, wd, sh, sw, dh, dw, groups, h_in, w_in)
        dw_ = K.conv2d_grad_weight(g, xd, sh, sw, dh, dw, groups, kh, kw)
        return dx, dw_

    return make_node(out, (x, w), bwd, "conv2d")


def _conv_transpose2d_core(x, w, stride, dilation, groups, out_hw) -> Tensor:
    """Adjoint of :func:`_conv2d_core` mapping to spatial size ``out_hw``."""
    sh, sw = stride
    dh, dw = dilation
    out = K.conv2d_grad_input(x.data, w.data, sh, sw, dh, dw, groups, *out_hw)
    if not recording(x, w):
        return constant(out, "conv_transpose2d")
    xd, wd = save_for_backward(x.data, w.data)
    kh, kw = w.data.shape[2], w.data.shape[3]

    def bwd(g):
        g = np.ascontiguousarray(g)
        dx = K.conv2d_forward(g, wd, sh, sw, dh, dw, groups)
        dw_ = K.conv2d_grad_weight(xd, g, sh, sw, dh, dw, groups, kh, kw)
        return dx, dw_

    return make_node(out, (x, w), bwd, "conv_transpose2d")


def _check_channels(c_in, w_shape, groups, transpose=False):
    c_out_like, c_g = w_shape[0], w_shape[1]
    if c_out_like % groups or c_in % groups:
        raise ValueError(f"channels ({w_shape[0]}, {c_in}) not divisible by groups={groups}")
    if transpose:
        if c_in != c_out_like:
            raise ValueError(f"conv_transpose2d: input has {c_in} channels, weight expects {c_out_like}")
    elif c_in // groups != c_g:
        raise ValueError(f"conv2d: input {c_in} channels, weight fan-in {c_g} x groups {groups}")


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1, groups: int = 1,
           padding_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation.  ``x`` is [B, C_in, H, W]; ``w`` is
    [C_out, C_in/groups, kH, kW]; output spatial extent is
    ``(in + 2*pad - dilation*(k-1) - 1) // stride + 1``.
    """
    x, w = _ensure(x), _ensure(w)
    stride, dilation, padding = _pair(stride), _pair(dilation), _pair(padding)
    _check_channels(x.data.shape[1], w.data.shape, groups)
    if any(padding):
        widths = ((0, 0), (0, 0), (padding[0], padding[0]), (padding[1], padding[1]))
        if padding_mode == "zeros":
            x = pad_constant(x, widths)
        elif padding_mode == "reflection":
            x = pad_reflect(x, widths)
        else:
            raise ValueError(f"unknown padding_mode {padding_mode!r}")
    out = _conv2d_core(x, w, stride, dilation, groups)
    if b is not None:
        out = add(out, reshape(_ensure(b), (1, -1, 1, 1)))
    return out


def conv_transpose2d(x, w, b=None, stride=1, padding=0, output_padding=0,
                     dilation=1, groups: int = 1) -> Tensor:
    """Adjoint of :func:`conv2d` with shared weight.

    ``x`` is [B, C_out, H, W]; ``w`` keeps the conv2d layout
    [C_out, C_in/groups, kH, kW]; output spatial extent is
    ``(in - 1)*stride - 2*pad + dilation*(k-1) + 1 + output_padding`` with
    ``0 <= output_padding < stride``.
    """
    x, w = _ensure(x), _ensure(w)
    stride, dilation = _pair(stride), _pair(dilation)
    padding, output_padding = _pair(padding), _pair(output_padding)
    _check_channels(x.data.shape[1], w.data.shape, groups, transpose=True)
    for op_, s in zip(output_padding, stride):
        if not 0 <= op_ < s:
            raise ValueError(f"output_padding must satisfy 0 <= op < stride, got {op_} vs {s}")
    full = []
    for ax in (0, 1):
        extent = (x.data.shape[2 + ax] - 1) * stride[ax] \
            + dilation[ax] * (w.data.shape[2 + ax] - 1) + 1 + output_padding[ax]
        if extent - 2 * padding[ax] < 1:
            raise ValueError("conv_transpose2d output size would be empty")
        full.append(extent)
    out = _conv_transpose2d_core(x, w, stride, dilation, groups, tuple(full))
    if any(padding):
        ph, pw = padding
        out = getitem(out, (slice(None), slice(None),
                            slice(ph, full[0] - ph), slice(pw, full[1] - pw)))
    if b is not None:
        out = add(out, reshape(_ensure(b), (1, -1, 1, 1)))
    return out


def conv1d(x, w, b=None, stride=1, padding=0, dilation=1, groups: int = 1,
           padding_mode: str = "zeros") -> Tensor:
    """1-D convolution via :func:`conv2d` with a singleton height axis."""
    x, w = _ensure(x), _ensure(w)
    x4 = reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2]))
    w4 = reshape(w, (w.shape[0], w.shape[1], 1, w.shape[2]))
    out = conv2d(x4, w4, b, stride=(1, _pair(stride)[0]), padding=(0, _pair(padding)[0]),
                 dilation=(1, _pair(dilation)[0]), groups=groups, padding_mode=padding_mode)
    return reshape(out, (out.shape[0], out.shape[1], out.shape[3]))


# ---------------------------------------------------------------------------
# Operator sugar on Tensor
# ---------------------------------------------------------------------------


def _radd(a, b):
    return add(b, a)


def _rsub(a, b):
    return sub(b, a)


def _rmul(a, b):
    return mul(b, a)


def _rdiv(a, b):
    return div(b, a)


Tensor.__add__ = add
Tensor.__radd__ = _radd
Tensor.__sub__ = sub
Tensor.__rsub__ = _rsub
Tensor.__mul__ = mul
Tensor.__rmul__ = _rmul
Tensor.__truediv__ = div
Tensor.__rtruediv__ = _rdiv
Tensor.__neg__ = neg
Tensor.__getitem__ = getitem
Tensor.reshape = reshape
Tensor.sum = sum_
Tensor.mean = mean
Tensor.exp = exp
Tensor.log = log
