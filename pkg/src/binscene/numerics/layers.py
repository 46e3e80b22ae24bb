"""Parameter containers for the network layers."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .tensor import Tensor, concat, default_dtype, sigmoid, tanh


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=True)


class Module:
    """Minimal module: attribute-registered parameters, buffers and children."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("running_") and isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise ConfigurationError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for name, p in params.items():
            if p.data.shape != state[name].shape:
                raise ConfigurationError(
                    f"{name}: checkpoint shape {state[name].shape} != model {p.data.shape}")
            p.data[...] = state[name]
        for name, b in buffers.items():
            b[...] = state[name]


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _kaiming(rng, fan_in, shape):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, dilation=1,
                 bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        kh, kw = F._pair(kernel)
        fan_in = in_channels * kh * kw
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = (kh, kw)
        self.stride = F._pair(stride)
        self.padding = F._pair(padding)
        self.dilation = F._pair(dilation)
        self.weight = parameter(_kaiming(rng, fan_in, (out_channels, in_channels, kh, kw)))
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, bias=True,
                 rng=None):
        rng = rng or np.random.default_rng(0)
        kh, kw = F._pair(kernel)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = (kh, kw)
        self.stride = F._pair(stride)
        self.padding = F._pair(padding)
        # Each output pixel receives about in*kh*kw/(sh*sw) contributions.
        fan_in = max(1, in_channels * kh * kw // (self.stride[0] * self.stride[1]))
        self.weight = parameter(_kaiming(rng, fan_in, (in_channels, out_channels, kh, kw)))
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    def __call__(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5):
        dtype = default_dtype()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight = parameter(_uniform(rng, in_features, (out_features, in_features)))
        self.bias = parameter(_uniform(rng, in_features, out_features)) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, features, eps=1e-5):
        self.gamma = parameter(np.ones(features))
        self.beta = parameter(np.zeros(features))
        self.eps = eps

    def __call__(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class GRU(Module):
    """Single-layer GRU over (T, N, D) sequences; gate order (reset, update, new)."""

    def __init__(self, input_size, hidden_size, rng=None):
        rng = rng or np.random.default_rng(0)
        h = hidden_size
        self.input_size, self.hidden_size = input_size, hidden_size
        self.w_ih = parameter(_uniform(rng, h, (3 * h, input_size)))
        self.w_hh = parameter(_uniform(rng, h, (3 * h, h)))
        self.b_ih = parameter(_uniform(rng, h, 3 * h))
        self.b_hh = parameter(_uniform(rng, h, 3 * h))

    def cell(self, xi: Tensor, h: Tensor) -> Tensor:
        """One step given the precomputed input projection ``xi`` (N, 3H)."""
        hs = self.hidden_size
        hh = F.linear(h, self.w_hh, self.b_hh)
        r = sigmoid(xi[:, :hs] + hh[:, :hs])
        z = sigmoid(xi[:, hs:2 * hs] + hh[:, hs:2 * hs])
        n = tanh(xi[:, 2 * hs:] + r * hh[:, 2 * hs:])
        return (1.0 - z) * n + z * h

    def __call__(self, seq: Tensor, h0: Tensor | None = None):
        if seq.ndim != 3 or seq.shape[2] != self.input_size:
            raise ConfigurationError(
                f"GRU expects (T, N, {self.input_size}) input, got {seq.shape}")
        t_len, n, _ = seq.shape
        h = h0 if h0 is not None else Tensor(np.zeros((n, self.hidden_size), dtype=seq.dtype))
        if h.shape != (n, self.hidden_size):
            raise ConfigurationError(f"h0 must be ({n}, {self.hidden_size}), got {h.shape}")
        xi = F.linear(seq, self.w_ih, self.b_ih)
        outs = []
        for t in range(t_len):
            h = self.cell(xi[t], h)
            outs.append(h.reshape(1, n, self.hidden_size))
        return concat(outs, axis=0), h


def gru_forward(seq: Tensor, layer: GRU, h0: Tensor | None = None):
    return layer(seq, h0)
