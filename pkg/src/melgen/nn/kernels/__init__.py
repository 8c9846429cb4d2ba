"""Convolution kernel backend selection.

The compiled Cython backend (``_cconv``) is preferred when importable; the
NumPy reference backend is the fallback.  Set ``MELGEN_KERNELS=reference``
(or ``cython``) to force a backend, and use :func:`set_backend` to switch at
runtime (the benchmark suite does this to compare the two).

Both backends implement:
    conv2d_forward(x, w, sh, sw, dh, dw, groups)
    conv2d_grad_input(gy, w, sh, sw, dh, dw, groups, h_in, w_in)
    conv2d_grad_weight(gy, x, sh, sw, dh, dw, groups, kh, kw)
with C-contiguous float32/float64 arrays and pre-padded inputs.
"""

from __future__ import annotations

import os

import numpy as np

from . import reference

try:
    from . import _cconv
except ImportError:
    _cconv = None

_BACKENDS = {"reference": reference}
if _cconv is not None:
    _BACKENDS["cython"] = _cconv

_forced = os.environ.get("MELGEN_KERNELS")
if _forced is not None and _forced not in _BACKENDS:
    raise ImportError(
        f"MELGEN_KERNELS={_forced!r} not available; choices: {sorted(_BACKENDS)}"
    )
_active = _BACKENDS[_forced] if _forced else _BACKENDS.get("cython", reference)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def active_backend() -> str:
    return _active.NAME


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; choices: {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def _prep(a, b):
    # both backends need a matching float32/float64 pair, C-contiguous
    dtype = np.result_type(a, b)
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    return (np.ascontiguousarray(a, dtype=dtype),
            np.ascontiguousarray(b, dtype=dtype))


def conv2d_forward(x, w, sh, sw, dh, dw, groups):
    x, w = _prep(x, w)
    return _active.conv2d_forward(x, w, sh, sw, dh, dw, groups)


def conv2d_grad_input(gy, w, sh, sw, dh, dw, groups, h_in, w_in):
    gy, w = _prep(gy, w)
    return _active.conv2d_grad_input(gy, w, sh, sw, dh, dw, groups, h_in, w_in)


def conv2d_grad_weight(gy, x, sh, sw, dh, dw, groups, kh, kw):
    gy, x = _prep(gy, x)
    return _active.conv2d_grad_weight(gy, x, sh, sw, dh, dw, groups, kh, kw)
