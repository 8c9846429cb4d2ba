# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels (forward, input grad, weight grad).

Contracts match ``melgen.nn.kernels.reference``: C-contiguous float32/float64
arrays, pre-padded inputs, cross-correlation semantics.
"""

import numpy as np

ctypedef fused real:
    float
    double

NAME = "cython"


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t dh, Py_ssize_t dw,
                   Py_ssize_t groups):
    cdef Py_ssize_t b_sz = x.shape[0], c_in = x.shape[1], h = x.shape[2], w_in = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], c_g = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h_out = (h - dh * (kh - 1) - 1) // sh + 1
    cdef Py_ssize_t w_out = (w_in - dw * (kw - 1) - 1) // sw + 1
    cdef Py_ssize_t out_per_g = c_out // groups

    if real is float:
        out = np.zeros((b_sz, c_out, h_out, w_out), dtype=np.float32)
    else:
        out = np.zeros((b_sz, c_out, h_out, w_out), dtype=np.float64)
    cdef real[:, :, :, ::1] y = out

    cdef Py_ssize_t b, oc, i, j, c, u, v, g, ci0, row, col
    cdef real acc
    with nogil:
        for b in range(b_sz):
            for oc in range(c_out):
                g = oc // out_per_g
                ci0 = g * c_g
                for i in range(h_out):
                    for j in range(w_out):
                        acc = 0
                        for c in range(c_g):
                            for u in range(kh):
                                row = i * sh + u * dh
                                for v in range(kw):
                                    col = j * sw + v * dw
                                    acc = acc + x[b, ci0 + c, row, col] * w[oc, c, u, v]
                        y[b, oc, i, j] = acc
    return out


def conv2d_grad_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                      Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t dh, Py_ssize_t dw,
                      Py_ssize_t groups, Py_ssize_t h_in, Py_ssize_t w_in):
    cdef Py_ssize_t b_sz = gy.shape[0], c_out = gy.shape[1]
    cdef Py_ssize_t h_out = gy.shape[2], w_out = gy.shape[3]
    cdef Py_ssize_t c_g = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t c_in = c_g * groups
    cdef Py_ssize_t out_per_g = c_out // groups

    if real is float:
        out = np.zeros((b_sz, c_in, h_in, w_in), dtype=np.float32)
    else:
        out = np.zeros((b_sz, c_in, h_in, w_in), dtype=np.float64)
    cdef real[:, :, :, ::1] dx = out

    cdef Py_ssize_t b, oc, i, j, c, u, v, g, ci0, row, col
    cdef real gval
    with nogil:
        for b in range(b_sz):
            for oc in range(c_out):
                g = oc // out_per_g
                ci0 = g * c_g
                for i in range(h_out):
                    for j in range(w_out):
                        gval = gy[b, oc, i, j]
                        for c in range(c_g):
                            for u in range(kh):
                                row = i * sh + u * dh
                                for v in range(kw):
                                    col = j * sw + v * dw
                                    dx[b, ci0 + c, row, col] += gval * w[oc, c, u, v]
    return out


def conv2d_grad_weight(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                       Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t dh, Py_ssize_t dw,
                       Py_ssize_t groups, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t b_sz = gy.shape[0], c_out = gy.shape[1]
    cdef Py_ssize_t h_out = gy.shape[2], w_out = gy.shape[3]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t c_g = c_in // groups
    cdef Py_ssize_t out_per_g = c_out // groups

    if real is float:
        out = np.zeros((c_out, c_g, kh, kw), dtype=np.float32)
    else:
        out = np.zeros((c_out, c_g, kh, kw), dtype=np.float64)
    cdef real[:, :, :, ::1] dw_ = out

    cdef Py_ssize_t b, oc, i, j, c, u, v, g, ci0, row, col
    cdef real gval
    with nogil:
        for b in range(b_sz):
            for oc in range(c_out):
                g = oc // out_per_g
                ci0 = g * c_g
                for i in range(h_out):
                    for j in range(w_out):
                        gval = gy[b, oc, i, j]
                        for c in range(c_g):
                            for u in range(kh):
                                row = i * sh + u * dh
                                for v in range(kw):
                                    col = j * sw + v * dw
                                    dw_[oc, c, u, v] += gval * x[b, ci0 + c, row, col]
    return out
