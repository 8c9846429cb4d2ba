"""Reverse-mode automatic differentiation on NumPy arrays.

A :class:`Tensor` wraps an ndarray; differentiable ops (see
``melgen.nn.functional``) attach a context recording their parents and a
backward closure.  :func:`backward` walks the graph in reverse topological
order and accumulates gradients into leaf tensors.

Every op output is checked for NaN/Inf and raises :class:`NumericFault` on
the spot (disable with :func:`set_numeric_checks` for micro-benchmarks).
The module also counts ndarrays saved for backward, which is what
activation checkpointing reduces; see :func:`saved_buffer_count`.

A graph and its tensors belong to one thread for the duration of a
forward/backward pass; parameters may be read concurrently but must be
updated only by their owning training thread.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import NumericFault

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad", "enable_grad",
    "is_grad_enabled", "set_numeric_checks", "checkpoint_segment",
    "saved_buffer_count", "reset_saved_buffer_count",
]


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True


_state = _State()
_check_numerics = True
_saved_buffers = 0


def set_numeric_checks(enabled: bool) -> None:
    global _check_numerics
    _check_numerics = bool(enabled)


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def enable_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = True
    try:
        yield
    finally:
        _state.grad_enabled = prev


def saved_buffer_count() -> int:
    """Number of arrays stashed for backward since the last reset."""
    return _saved_buffers


def reset_saved_buffer_count() -> None:
    global _saved_buffers
    _saved_buffers = 0


def save_for_backward(*arrays):
    """Register arrays a backward closure will need; returns them unchanged."""
    global _saved_buffers
    _saved_buffers += len(arrays)
    return arrays


class _Ctx:
    __slots__ = ("parents", "bwd", "op")

    def __init__(self, parents, bwd, op):
        self.parents = parents
        self.bwd = bwd
        self.op = op


class Tensor:
    """An ndarray with an optional place in an autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._ctx: _Ctx | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad_flag})"

    def __len__(self):
        return len(self.data)

    # arithmetic operators are attached by melgen.nn.functional at import


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def _check(data, op: str):
    if _check_numerics and not np.all(np.isfinite(data)):
        raise NumericFault(f"non-finite values produced by '{op}'")


def make_node(data, parents, bwd, op: str, force_grad: bool = False) -> Tensor:
    """Create an op output, attaching a backward context when recording."""
    _check(data, op)
    req = _state.grad_enabled and (force_grad or any(p.requires_grad for p in parents))
    out = Tensor(data, requires_grad=req)
    if req:
        out._ctx = _Ctx(tuple(parents), bwd, op)
    return out


def recording(*tensors) -> bool:
    """True when an op over these inputs should build backward state."""
    return _state.grad_enabled and any(t.requires_grad for t in tensors)


def constant(data, op: str = "const") -> Tensor:
    _check(data, op)
    return Tensor(data)


def _accumulate(store: dict, key, grad):
    if key in store:
        store[key] = store[key] + grad
    else:
        store[key] = grad


def _backward_from(root: Tensor, seed: np.ndarray) -> None:
    if not root.requires_grad:
        raise ValueError("backward on a tensor that does not require grad")
    if root._ctx is None:
        root.grad = seed if root.grad is None else root.grad + seed
        return

    # post-order DFS over nodes that carry a context
    topo: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, iter]] = [(root, iter(root._ctx.parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and p._ctx is not None and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._ctx.parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._ctx.bwd(g)
        for parent, pg in zip(node._ctx.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._ctx is None:
                parent.grad = pg if parent.grad is None else parent.grad + pg
            else:
                _accumulate(grads, id(parent), pg)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar; grads accumulate across calls."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    seed = np.ones_like(loss.data)
    _backward_from(loss, seed)


def checkpoint_segment(f, x: Tensor) -> Tensor:
    """Run sub-network ``f`` storing only its input; recompute on backward.

    ``f`` must be deterministic given ``x`` and may close over
    :class:`Parameter` leaves (their grads accumulate during the recomputed
    backward).  Gradients are bit-identical to the non-checkpointed run
    because the recomputation replays the same arithmetic.
    """
    if not _state.grad_enabled:
        return f(x)
    with no_grad():
        y = f(x)
    (saved_x,) = save_for_backward(x.data)

    def bwd(g):
        with enable_grad():
            x_re = Tensor(saved_x, requires_grad=True)
            y_re = f(x_re)
            _backward_from(y_re, g)
        gx = x_re.grad if x_re.grad is not None else np.zeros_like(saved_x)
        return (gx,)

    return make_node(y.data, (x,), bwd, "checkpoint", force_grad=True)
