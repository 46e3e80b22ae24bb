"""Tensor engine with reverse-mode autodiff and the layers the models need."""
from . import functional
from .functional import (
    batch_norm, conv2d, conv_transpose2d, istft, linear, stft, upsample_bilinear,
)
from .kernels import BACKEND
from .layers import GRU, BatchNorm, Conv2d, ConvTranspose2d, LayerNorm, Linear, Module, gru_forward
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor, absolute, backward, clamp_min, concat, exp, log, no_grad, precision, relu,
    sigmoid, softmax, sqrt, tanh,
)

__all__ = [
    "BACKEND", "Tensor", "backward", "no_grad", "precision", "functional",
    "conv2d", "conv_transpose2d", "batch_norm", "linear", "upsample_bilinear", "stft", "istft",
    "relu", "sigmoid", "softmax", "tanh", "exp", "log", "sqrt", "absolute", "clamp_min", "concat",
    "Module", "Conv2d", "ConvTranspose2d", "BatchNorm", "Linear", "LayerNorm", "GRU", "gru_forward",
    "Adam", "AdamState", "adam_step",
]
