"""Central finite-difference gradient oracle.

Checks analytic gradients against ``(f(x+h) - f(x-h)) / 2h`` computed
element-by-element at float64.  The relative error of an element is
``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` so that
near-zero gradients are compared on an absolute scale.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, backward, no_grad


def fd_gradient(f, wrt: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Numeric gradient of scalar-valued ``f()`` with respect to ``wrt``.

    ``f`` takes no arguments and must read ``wrt.data``; entries are
    perturbed in place and restored.
    """
    data = wrt.data
    grad = np.zeros_like(data)
    flat = data.ravel()
    gflat = grad.ravel()
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(f, wrt: list[Tensor], eps: float = 1e-5, floor: float = 1e-4) -> float:
    """Max relative error between backprop and finite differences.

    ``f`` is a no-argument closure returning a scalar Tensor built from the
    ``wrt`` tensors (all float64, requires_grad).
    """
    for t in wrt:
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 tensors")
        t.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = fd_gradient(f, t, eps=eps)
        worst = max(worst, max_rel_error(analytic, numeric, floor=floor))
    return worst
