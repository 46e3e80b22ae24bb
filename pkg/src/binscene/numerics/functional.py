"""Layer-level differentiable ops: convolutions, batch norm, resampling and the
STFT/ISTFT pair used inside spectral losses."""
from __future__ import annotations

import numpy as np

from .. import dsp
from ..errors import ConfigurationError, InvalidInputError
from . import kernels
from .tensor import Tensor, as_tensor, make, mean, sqrt


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv_output_size(n: int, k: int, s: int, p: int, d: int) -> int:
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0,
           dilation=1) -> Tensor:
    """Cross-correlation of NCHW input with an (out, in, kh, kw) kernel."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if x.ndim != 4 or w.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ConfigurationError(f"input has {c} channels, layer expects {ci}")
    oh = conv_output_size(h, kh, sh, ph, dh)
    ow = conv_output_size(wd, kw, sw, pw, dw)
    if oh < 1 or ow < 1:
        raise ConfigurationError(f"input {h}x{wd} too small for kernel {kh}x{kw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    xp = np.ascontiguousarray(xp)
    cols = kernels.im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow)
    wm = w.data.reshape(o, -1)
    out = np.matmul(wm, cols).reshape(n, o, oh, ow)
    if b is not None:
        out += b.data.reshape(1, o, 1, 1)
    hp, wp = xp.shape[2:]

    def bw(g):
        g = g.reshape(n, o, oh * ow)
        gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wm.T, g)
            gxp = kernels.col2im(gcols, n, c, hp, wp, kh, kw, sh, sw, dh, dw, oh, ow)
            gx = gxp[:, :, ph:ph + h, pw:pw + wd]
        gb = g.sum(axis=(0, 2)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make(out, parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0,
                     dilation=1) -> Tensor:
    """Adjoint of :func:`conv2d`; ``w`` is laid out (in, out, kh, kw)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    n, c, h, wd = x.shape
    ci, o, kh, kw = w.shape
    if c != ci:
        raise ConfigurationError(f"input has {c} channels, layer expects {ci}")
    oh = (h - 1) * sh - 2 * ph + dh * (kh - 1) + 1
    ow = (wd - 1) * sw - 2 * pw + dw * (kw - 1) + 1
    if oh < 1 or ow < 1:
        raise ConfigurationError(f"transposed conv output would be {oh}x{ow}")
    hp, wp = oh + 2 * ph, ow + 2 * pw
    wm = w.data.reshape(ci, -1)
    xm = x.data.reshape(n, c, h * wd)
    cols = np.matmul(wm.T, xm)
    outp = kernels.col2im(cols, n, o, hp, wp, kh, kw, sh, sw, dh, dw, h, wd)
    out = np.ascontiguousarray(outp[:, :, ph:ph + oh, pw:pw + ow])
    if b is not None:
        out += b.data.reshape(1, o, 1, 1)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else g
        gcols = kernels.im2col(np.ascontiguousarray(gp), kh, kw, sh, sw, dh, dw, h, wd)
        gx = np.matmul(wm, gcols).reshape(x.shape) if x.requires_grad else None
        gw = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make(out, parents, bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with w laid out (out, in)."""
    wt = w.data.T
    out = x.data @ wt
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ w.data) if x.requires_grad else None
        gw = g2.T @ x.data.reshape(-1, x.shape[-1]) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make(out, parents, bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis except 1.

    ``momentum`` is the fraction of the old running statistic kept per update.
    Running buffers are updated in place during training.
    """
    if x.shape[0] == 0:
        raise InvalidInputError("batch_norm got an empty batch")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    g_ = gamma.data.reshape(shape)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        m = x.data.size // x.shape[1]
        unbiased = var.reshape(-1) * (m / max(m - 1, 1))
        running_mean *= momentum
        running_mean += (1 - momentum) * mu.reshape(-1)
        running_var *= momentum
        running_var += (1 - momentum) * unbiased
    else:
        mu = running_mean.reshape(shape).astype(x.dtype)
        var = running_var.reshape(shape).astype(x.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    out = g_ * xhat + beta.data.reshape(shape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * g_
        if training:
            m = x.data.size // x.shape[1]
            gx = invstd / m * (m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                               - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * invstd
        return gx, ggamma, gbeta

    return make(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return xc / sqrt(var + eps) * gamma + beta


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) interpolation weights, half-pixel centers, edge-clamped."""
    a = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a


def upsample_bilinear(x: Tensor, size) -> Tensor:
    oh, ow = _pair(size)
    h, w = x.shape[-2:]
    ah = bilinear_matrix(h, oh, x.dtype)
    aw = bilinear_matrix(w, ow, x.dtype)
    out = ah @ x.data @ aw.T
    return make(out, (x,), lambda g: (ah.T @ g @ aw,))


def center_crop(x: Tensor, size) -> Tensor:
    th, tw = _pair(size)
    h, w = x.shape[-2:]
    if th > h or tw > w:
        raise ConfigurationError(f"cannot crop {h}x{w} to {th}x{tw}")
    r0, c0 = (h - th) // 2, (w - tw) // 2
    return x[..., r0:r0 + th, c0:c0 + tw]


# -- differentiable STFT / ISTFT (real/imag planes) ----------------------------

def _rfft_adjoint(gre: np.ndarray, gim: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of x -> (Re rfft x, Im rfft x) along the last axis."""
    G = gre + 1j * gim
    scale = np.full(G.shape[-1], 0.5)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0
    return n * np.fft.irfft(G * scale, n=n, axis=-1)


def stft(x: Tensor, window: np.ndarray, hop: int) -> tuple[Tensor, Tensor]:
    """(..., n) waveform -> real and imaginary (..., bins, frames) planes."""
    size = window.size
    n = x.shape[-1]
    if n < size:
        raise InvalidInputError(f"signal of {n} samples is shorter than one window ({size})")
    spec = dsp.stft_array(x.data, window, hop)
    re = spec.real.astype(x.dtype)
    im = spec.imag.astype(x.dtype)
    n_frames = spec.shape[-1]
    win = window.astype(x.dtype)

    def adjoint(gre, gim):
        gf = _rfft_adjoint(np.swapaxes(gre, -1, -2), np.swapaxes(gim, -1, -2), size) * win
        gx = np.zeros(x.shape, dtype=x.dtype)
        for t in range(n_frames):
            gx[..., t * hop:t * hop + size] += gf[..., t, :]
        return gx

    # Both planes share one graph node so the adjoint runs once.
    packed = make(np.stack([re, im]), (x,), lambda g: (adjoint(g[0], g[1]),))
    return packed[0], packed[1]


def istft(re: Tensor, im: Tensor, window: np.ndarray, hop: int) -> Tensor:
    """Inverse of :func:`stft` with squared-window overlap-add compensation."""
    size = window.size
    X = re.data + 1j * im.data
    out = dsp.istft_array(X, window, hop).astype(re.dtype)
    n_frames = re.shape[-1]
    inv = dsp.istft_gain(window, hop, n_frames)
    win = window.astype(re.dtype)
    scale = np.full(size // 2 + 1, 2.0 / size)
    scale[0] = 1.0 / size
    scale[-1] = 1.0 / size

    def bw(g):
        g = g * inv
        frames = dsp.frame_signal(g, size, hop) * win
        F = np.fft.rfft(frames, axis=-1) * scale
        F = np.swapaxes(F, -1, -2)
        return F.real.astype(re.dtype), F.imag.astype(re.dtype)

    return make(out, (re, im), bw)


def magnitude(re: Tensor, im: Tensor, eps: float = 1e-12) -> Tensor:
    return sqrt(re * re + im * im + eps)


__all__ = [
    "as_tensor", "conv2d", "conv_transpose2d", "linear", "batch_norm", "layer_norm",
    "upsample_bilinear", "center_crop", "stft", "istft", "magnitude", "bilinear_matrix",
    "conv_output_size",
]
