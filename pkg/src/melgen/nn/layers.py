"""Parameter-holding layers and the minimal module system.

Initialization follows fan-in-scaled uniform for linear/conv weights
(``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``), standard normal for embeddings.
Every layer takes an optional ``rng`` (a ``numpy.random.Generator``) so model
construction is reproducible, and a ``dtype`` (float32 for training, float64
for gradient checks).
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .autograd import Parameter, Tensor


class Module:
    """Base class: anything holding Parameters directly or via sub-modules."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = ""):
        """Yield (dotted_path, Parameter) pairs in attribute order."""
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            yield from _walk(path, value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - arrays.keys()
        extra = arrays.keys() - own.keys()
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(arrays[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.copy()


def _walk(path, value):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)


def param_count(model: Module) -> int:
    """Total number of scalar parameters in a model."""
    return model.param_count()


def _default_rng(rng):
    return rng if rng is not None else np.random.default_rng()


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng=None, dtype=np.float32):
        rng = _default_rng(rng)
        self.weight = Parameter(_uniform_init(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(_uniform_init(rng, (out_features,), in_features, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng=None, dtype=np.float32):
        rng = _default_rng(rng)
        self.weight = Parameter(rng.standard_normal((count, dim)).astype(dtype))

    def forward(self, ids) -> Tensor:
        return F.embedding(ids, self.weight)


class _ConvBase(Module):
    def _init_weight(self, rng, shape, fan_in, dtype, weight_norm, norm_axes):
        self.weight_norm = weight_norm
        self._norm_axes = norm_axes
        w = _uniform_init(rng, shape, fan_in, dtype)
        if weight_norm:
            self.weight_v = Parameter(w)
            norm = np.sqrt((w * w).sum(axis=norm_axes, keepdims=True))
            self.weight_g = Parameter(norm.astype(dtype))
        else:
            self.weight = Parameter(w)

    def effective_weight(self) -> Tensor:
        if self.weight_norm:
            return F.weight_norm(self.weight_v, self.weight_g, self._norm_axes)
        return self.weight


class Conv2d(_ConvBase):
    def __init__(self, in_channels: int, out_channels: int, kernel_size, stride=1,
                 padding=0, dilation=1, groups: int = 1, padding_mode: str = "zeros",
                 bias: bool = True, weight_norm: bool = False, rng=None, dtype=np.float32):
        rng = _default_rng(rng)
        kh, kw = F._pair(kernel_size)
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"channels ({in_channels}, {out_channels}) not divisible by groups={groups}")
        fan_in = (in_channels // groups) * kh * kw
        self._init_weight(rng, (out_channels, in_channels // groups, kh, kw),
                          fan_in, dtype, weight_norm, norm_axes=(1, 2, 3))
        self.bias = Parameter(_uniform_init(rng, (out_channels,), fan_in, dtype)) if bias else None
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.groups, self.padding_mode = groups, padding_mode

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.effective_weight(), self.bias, stride=self.stride,
                        padding=self.padding, dilation=self.dilation, groups=self.groups,
                        padding_mode=self.padding_mode)


class Conv1d(_ConvBase):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, dilation: int = 1, groups: int = 1,
                 padding_mode: str = "zeros", bias: bool = True, weight_norm: bool = False,
                 rng=None, dtype=np.float32):
        rng = _default_rng(rng)
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"channels ({in_channels}, {out_channels}) not divisible by groups={groups}")
        fan_in = (in_channels // groups) * kernel_size
        self._init_weight(rng, (out_channels, in_channels // groups, kernel_size),
                          fan_in, dtype, weight_norm, norm_axes=(1, 2))
        self.bias = Parameter(_uniform_init(rng, (out_channels,), fan_in, dtype)) if bias else None
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.groups, self.padding_mode = groups, padding_mode

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.effective_weight(), self.bias, stride=self.stride,
                        padding=self.padding, dilation=self.dilation, groups=self.groups,
                        padding_mode=self.padding_mode)


class ConvTranspose2d(_ConvBase):
    """Transposed conv sharing the conv2d weight layout [C_in, C_out/g, kH, kW]
    (the first axis is this layer's *input*; it plays conv2d's output role).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size, stride=1,
                 padding=0, output_padding=0, groups: int = 1, bias: bool = True,
                 weight_norm: bool = False, rng=None, dtype=np.float32):
        rng = _default_rng(rng)
        if groups != 1 and weight_norm:
            raise ValueError("weight_norm with groups > 1 is not supported for transposed conv")
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"channels ({in_channels}, {out_channels}) not divisible by groups={groups}")
        kh, kw = F._pair(kernel_size)
        fan_in = (in_channels // groups) * kh * kw
        # per-output-channel norm: outputs live on axis 1 of the weight
        self._init_weight(rng, (in_channels, out_channels // groups, kh, kw),
                          fan_in, dtype, weight_norm, norm_axes=(0, 2, 3))
        self.bias = Parameter(_uniform_init(rng, (out_channels,), fan_in, dtype)) if bias else None
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.effective_weight(), self.bias, stride=self.stride,
                                  padding=self.padding, output_padding=self.output_padding,
                                  groups=self.groups)


class GRUCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng=None, dtype=np.float32):
        rng = _default_rng(rng)
        self.hidden_size = hidden_size
        self.w_ih = Parameter(_uniform_init(rng, (3 * hidden_size, input_size), hidden_size, dtype))
        self.w_hh = Parameter(_uniform_init(rng, (3 * hidden_size, hidden_size), hidden_size, dtype))
        self.b_ih = Parameter(_uniform_init(rng, (3 * hidden_size,), hidden_size, dtype))
        self.b_hh = Parameter(_uniform_init(rng, (3 * hidden_size,), hidden_size, dtype))

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        return F.gru_step(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)
