"""Minimal reverse-mode differentiable tensor core.

Provides exactly the layer set the models need: linear, embedding, 1-D/2-D
(transposed, grouped, dilated) convolutions, GRU steps and weight
normalization, plus activation checkpointing, an Adam optimizer, a
finite-difference gradient oracle and a binary checkpoint container.
"""

from . import functional, kernels
from .autograd import (Parameter, Tensor, backward, checkpoint_segment,
                       enable_grad, no_grad, reset_saved_buffer_count,
                       saved_buffer_count, set_numeric_checks)
from .gradcheck import fd_gradient, gradcheck, max_rel_error
from .layers import (Conv1d, Conv2d, ConvTranspose2d, Embedding, GRUCell,
                     Linear, Module, param_count)
from .optim import Adam
from .serialize import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad", "enable_grad",
    "checkpoint_segment", "saved_buffer_count", "reset_saved_buffer_count",
    "set_numeric_checks", "functional", "kernels",
    "Module", "Linear", "Embedding", "Conv1d", "Conv2d", "ConvTranspose2d",
    "GRUCell", "param_count", "Adam",
    "gradcheck", "fd_gradient", "max_rel_error",
    "Checkpoint", "save_checkpoint", "load_checkpoint",
]
