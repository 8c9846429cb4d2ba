"""NumPy fallback for the convolution kernels.

Same contracts as the compiled backend (``_cconv``): inputs are C-contiguous
float32/float64, spatial padding has already been applied by the caller, and
convolution means cross-correlation (no kernel flip).

Shapes:
    x  [B, C_in, H, W]          w  [C_out, C_in/groups, kH, kW]
    y  [B, C_out, H_out, W_out] with H_out = (H - dh*(kH-1) - 1)//sh + 1
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "reference"


def _tap_view(x, kh, kw, sh, sw, dh, dw):
    # [B, C, H_out, W_out, kH, kW] view with stride/dilation folded in
    span_h = (kh - 1) * dh + 1
    span_w = (kw - 1) * dw + 1
    v = sliding_window_view(x, (span_h, span_w), axis=(2, 3))
    return v[:, :, ::sh, ::sw, ::dh, ::dw]


def conv2d_forward(x, w, sh, sw, dh, dw, groups):
    b, c_in, _, _ = x.shape
    c_out, c_g, kh, kw = w.shape
    v = _tap_view(x, kh, kw, sh, sw, dh, dw)
    h_out, w_out = v.shape[2], v.shape[3]
    v = v.reshape(b, groups, c_in // groups, h_out, w_out, kh, kw)
    wg = w.reshape(groups, c_out // groups, c_g, kh, kw)
    y = np.einsum("bgchwuv,gocuv->bgohw", v, wg)
    return np.ascontiguousarray(y.reshape(b, c_out, h_out, w_out))


def conv2d_grad_input(gy, w, sh, sw, dh, dw, groups, h_in, w_in):
    b, c_out, h_out, w_out = gy.shape
    _, c_g, kh, kw = w.shape
    c_in = c_g * groups
    gyg = gy.reshape(b, groups, c_out // groups, h_out, w_out)
    wg = w.reshape(groups, c_out // groups, c_g, kh, kw)
    dx = np.zeros((b, c_in, h_in, w_in), dtype=gy.dtype)
    for u in range(kh):
        for v in range(kw):
            contrib = np.einsum("bgohw,goc->bgchw", gyg, wg[:, :, :, u, v])
            rows = slice(u * dh, u * dh + (h_out - 1) * sh + 1, sh)
            cols = slice(v * dw, v * dw + (w_out - 1) * sw + 1, sw)
            dx[:, :, rows, cols] += contrib.reshape(b, c_in, h_out, w_out)
    return dx


def conv2d_grad_weight(gy, x, sh, sw, dh, dw, groups, kh, kw):
    b, c_out, h_out, w_out = gy.shape
    c_in = x.shape[1]
    v = _tap_view(x, kh, kw, sh, sw, dh, dw)[:, :, :h_out, :w_out]
    v = v.reshape(b, groups, c_in // groups, h_out, w_out, kh, kw)
    gyg = gy.reshape(b, groups, c_out // groups, h_out, w_out)
    dw_ = np.einsum("bgohw,bgchwuv->gocuv", gyg, v)
    return np.ascontiguousarray(dw_.reshape(c_out, c_in // groups, kh, kw))
