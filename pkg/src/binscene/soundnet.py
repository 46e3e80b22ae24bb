"""Encoders, decoders and the shared multitask forward pass.

Batches are dicts of numpy arrays:

``logspec``  (N, K, F, T) log-magnitude spectrograms of the K input channels
``f0``, ``loudness``  (N, K, T); ``mfcc`` (N, K, T, n_mfcc)  DDSP descriptors
``ref_re``, ``ref_im``  (N, 2, F, T) complex STFT of the front pair (3, 8)
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import dsp
from .errors import ConfigurationError, InvalidInputError
from .numerics import functional as F
from .numerics.layers import GRU, BatchNorm, Conv2d, ConvTranspose2d, LayerNorm, Linear, Module
from .numerics.tensor import Tensor, concat, relu, sigmoid, softmax

TASK_CODES = {"S": "semantic", "D": "depth", "M": "motion", "R": "s3r"}
ENCODER_KINDS = ("spectrogram", "ddsp", "combined")
REFERENCE_PAIR = (3, 8)
# Pairs S3R can predict, in the order they are added as P grows.
OUTPUT_PAIRS = ((1, 6), (4, 7), (2, 5))
N_CLASSES = 4
DEPTH_RANGE = (1.0, 50.0)
FULL_SCALE_CONV_PLAN = (64, 128, 256, 512)


@dataclass
class ModelConfig:
    encoder: str = "spectrogram"
    conv_channels: tuple = (16, 32, 64, 64)
    aspp_filters: int = 64
    aspp_out: int = 64
    input_channels: tuple = REFERENCE_PAIR
    tasks: str = "S"
    output_pairs: int = 1
    grid: tuple = (32, 64)
    n_bins: int = 257
    n_frames: int = 97
    decoder_width: int = 64
    up_channels: tuple = (32, 16, 8, 8, 8)
    n_mfcc: int = 16
    gru_units: int = 64
    z_dim: int = 16
    mlp_hidden: int = 256
    ddsp_channels: int = 64
    f0_scale: float = 1000.0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.input_channels = tuple(int(c) for c in self.input_channels)
        self.grid = tuple(int(g) for g in self.grid)
        self.up_channels = tuple(int(c) for c in self.up_channels)
        self.tasks = "".join(c for c in "SDMR" if c in self.tasks.upper())
        self.validate()

    def validate(self):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigurationError(f"encoder must be one of {ENCODER_KINDS}, got {self.encoder!r}")
        if len(self.conv_channels) != 4:
            raise ConfigurationError("conv_channels needs exactly 4 widths")
        if not self.input_channels or any(not 1 <= c <= 8 for c in self.input_channels):
            raise ConfigurationError(f"input channel ids must be in 1..8, got {self.input_channels}")
        if len(set(self.input_channels)) != len(self.input_channels):
            raise ConfigurationError("input channel ids must be distinct")
        if not self.tasks:
            raise ConfigurationError("at least one task is required")
        if len(self.up_channels) != 5:
            raise ConfigurationError("up_channels needs exactly 5 widths")
        if "R" in self.tasks:
            if not 1 <= self.output_pairs <= 3:
                raise ConfigurationError(f"output_pairs must be 1..3, got {self.output_pairs}")
            if not set(REFERENCE_PAIR) <= set(self.input_channels):
                raise ConfigurationError("the S3R task needs channels 3 and 8 among the inputs")

    @property
    def task_names(self) -> tuple:
        return tuple(TASK_CODES[c] for c in self.tasks)

    @property
    def feature_grid(self) -> tuple[int, int]:
        h, w = self.n_bins, self.n_frames
        for _ in range(4):
            h = F.conv_output_size(h, 4, 2, 1, 1)
            w = F.conv_output_size(w, 4, 2, 1, 1)
        if h < 1 or w < 1:
            raise ConfigurationError(f"spectrogram {self.n_bins}x{self.n_frames} is too small")
        return h, w

    def target_pairs(self) -> tuple:
        return OUTPUT_PAIRS[:self.output_pairs]

    def to_kv(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_kv(cls, kv: dict) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            default = f.default
            if isinstance(default, tuple):
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif isinstance(default, int):
                kw[f.name] = int(raw)
            elif isinstance(default, float):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


class ConvBnRelu(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, dilation=1, rng=None):
        self.conv = Conv2d(cin, cout, kernel, stride, padding, dilation, rng=rng)
        self.bn = BatchNorm(cout)

    def __call__(self, x):
        return relu(self.bn(self.conv(x)))


class SpectrogramEncoder(Module):
    """One 4-layer strided conv stack applied with shared weights to every channel."""

    def __init__(self, widths, rng):
        chans = (1,) + tuple(widths)
        self.layers = [ConvBnRelu(chans[i], chans[i + 1], 4, 2, 1, rng=rng) for i in range(4)]
        self.out_per_channel = chans[-1]

    def __call__(self, logspec: np.ndarray | Tensor) -> Tensor:
        x = logspec if isinstance(logspec, Tensor) else Tensor(logspec)
        if x.ndim != 4:
            raise ConfigurationError(f"expected (N, K, F, T) spectrograms, got {x.shape}")
        n, k, fb, tf = x.shape
        h = x.reshape(n * k, 1, fb, tf)
        for layer in self.layers:
            h = layer(h)
        _, c, hh, ww = h.shape
        return h.reshape(n, k * c, hh, ww)


class ASPP(Module):
    """1x1 branch plus 3x3 branches at dilation 6, 12, 18, fused by a 1x1 conv."""

    RATES = (6, 12, 18)

    def __init__(self, cin, filters, cout, rng):
        self.branches = [ConvBnRelu(cin, filters, 1, rng=rng)] + [
            ConvBnRelu(cin, filters, 3, padding=r, dilation=r, rng=rng) for r in self.RATES]
        self.project = ConvBnRelu(len(self.branches) * filters, cout, 1, rng=rng)

    def __call__(self, x):
        return self.project(concat([b(x) for b in self.branches], axis=1))


class DdspEncoder(Module):
    """(f0, loudness, z) per frame -> MLP -> feature grid, shared across channels."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.h, self.w = cfg.feature_grid
        self.norm = LayerNorm(cfg.n_mfcc)
        self.gru = GRU(cfg.n_mfcc, cfg.gru_units, rng=rng)
        self.to_z = Linear(cfg.gru_units, cfg.z_dim, rng=rng)
        flat = cfg.n_frames * (2 + cfg.z_dim)
        out = cfg.ddsp_channels * self.h * self.w
        self.mlp = [Linear(flat, cfg.mlp_hidden, rng=rng), Linear(cfg.mlp_hidden, cfg.mlp_hidden, rng=rng),
                    Linear(cfg.mlp_hidden, out, rng=rng)]

    def latent(self, mfcc: Tensor) -> Tensor:
        """(B, T, n_mfcc) -> (B, T, z_dim)."""
        seq = self.norm(mfcc).transpose(1, 0, 2)
        hidden, _ = self.gru(seq)
        return self.to_z(hidden.transpose(1, 0, 2))

    def __call__(self, f0, loudness, mfcc) -> Tensor:
        f0, loudness, mfcc = (np.asarray(a) for a in (f0, loudness, mfcc))
        n, k, t = f0.shape
        if loudness.shape != (n, k, t) or mfcc.shape[:3] != (n, k, t):
            raise InvalidInputError("DDSP descriptors disagree in frame count")
        if t != self.cfg.n_frames:
            raise ConfigurationError(f"model expects {self.cfg.n_frames} frames, got {t}")
        dtype = self.norm.gamma.dtype
        b = n * k
        z = self.latent(Tensor(mfcc.reshape(b, t, -1), dtype=dtype))
        scalars = np.stack([f0.reshape(b, t) / self.cfg.f0_scale, loudness.reshape(b, t)], axis=-1)
        frames = concat([Tensor(scalars, dtype=dtype), z], axis=-1)
        h = frames.reshape(b, -1)
        h = relu(self.mlp[0](h))
        h = relu(self.mlp[1](h))
        h = self.mlp[2](h)
        return h.reshape(n, k * self.cfg.ddsp_channels, self.h, self.w)


def coordinate_planes(grid, dtype) -> np.ndarray:
    """sin/cos of azimuth and normalized elevation for each panorama pixel, (3, H, W)."""
    h, w = grid
    az = (np.arange(w) + 0.5) / w * 2 * np.pi - np.pi
    el = 1.0 - 2.0 * (np.arange(h) + 0.5) / h
    return np.stack([np.broadcast_to(np.sin(az), (h, w)), np.broadcast_to(np.cos(az), (h, w)),
                     np.broadcast_to(el[:, None], (h, w))]).astype(dtype)


class DenseDecoder(Module):
    """Upsample to the panorama grid, then three 1x1 convs (BN+ReLU after the first two).

    The upsampled features are joined with their global average and fixed pixel
    coordinates so the per-pixel convs can place objects by bearing.
    """

    def __init__(self, cin, width, cout, grid, head, rng):
        if head not in ("softmax", "linear"):
            raise ConfigurationError(f"unknown decoder head {head!r}")
        self.grid, self.head = tuple(grid), head
        self.c1 = ConvBnRelu(2 * cin + 3, width, 1, rng=rng)
        self.c2 = ConvBnRelu(width, width, 1, rng=rng)
        self.c3 = Conv2d(width, cout, 1, rng=rng)

    def __call__(self, feat: Tensor) -> Tensor:
        n, c = feat.shape[:2]
        h, w = self.grid
        up = F.upsample_bilinear(feat, self.grid)
        pooled = feat.mean(axis=(2, 3), keepdims=True)
        ones = Tensor(np.ones((1, 1, h, w), dtype=feat.dtype))
        coords = Tensor(np.broadcast_to(coordinate_planes(self.grid, feat.dtype), (n, 3, h, w)))
        x = concat([up, pooled * ones, coords], axis=1)
        out = self.c3(self.c2(self.c1(x)))
        return softmax(out, axis=1) if self.head == "softmax" else out


class S3RDecoder(Module):
    """Five stride-2 transposed convs, 1x1 to 4P mask planes, sigmoid mapped to [-1, 1]."""

    def __init__(self, cin, up_channels, pairs, out_hw, rng):
        chans = (cin,) + tuple(up_channels)
        self.ups = [ConvTranspose2d(chans[i], chans[i + 1], 4, 2, 1, rng=rng) for i in range(5)]
        self.bns = [BatchNorm(chans[i + 1]) for i in range(5)]
        self.head = Conv2d(chans[-1], 4 * pairs, 1, rng=rng)
        self.pairs, self.out_hw = pairs, tuple(out_hw)

    def __call__(self, feat):
        x = feat
        for up, bn in zip(self.ups, self.bns):
            x = relu(bn(up(x)))
        m = 2.0 * sigmoid(self.head(x)) - 1.0
        return fit_to_grid(m, self.out_hw)


def fit_to_grid(x: Tensor, size) -> Tensor:
    """Center-crop to the target aspect ratio, then bilinearly resize."""
    th, tw = size
    h, w = x.shape[-2:]
    if h * tw > w * th:
        ch, cw = min(h, max(th, int(round(w * th / tw)))), w
    else:
        ch, cw = h, min(w, max(tw, int(round(h * tw / th))))
    if (ch, cw) != (h, w):
        x = F.center_crop(x, (ch, cw))
    if (ch, cw) != (th, tw):
        x = F.upsample_bilinear(x, (th, tw))
    return x


@dataclass
class MultitaskPrediction:
    semantic: Tensor | None = None  # (N, 4, H, W) class probabilities
    depth: Tensor | None = None     # (N, 1, H, W) normalized depth
    flow: Tensor | None = None      # (N, 2, H, W) pixels
    masks: Tensor | None = None     # (N, 4P, F, T) planes [re_L, im_L, re_R, im_R] per pair
    features: Tensor | None = field(default=None, repr=False)


class SoundNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        k = len(cfg.input_channels)
        width = 0
        self.spec_encoder = None
        self.ddsp_encoder = None
        if cfg.encoder in ("spectrogram", "combined"):
            self.spec_encoder = SpectrogramEncoder(cfg.conv_channels, rng)
            width += k * cfg.conv_channels[-1]
        if cfg.encoder in ("ddsp", "combined"):
            self.ddsp_encoder = DdspEncoder(cfg, rng)
            width += k * cfg.ddsp_channels
        self.aspp = ASPP(width, cfg.aspp_filters, cfg.aspp_out, rng)
        c = cfg.aspp_out
        if "S" in cfg.tasks:
            self.semantic = DenseDecoder(c, cfg.decoder_width, N_CLASSES, cfg.grid, "softmax", rng)
        if "D" in cfg.tasks:
            self.depth = DenseDecoder(c, cfg.decoder_width, 1, cfg.grid, "linear", rng)
        if "M" in cfg.tasks:
            self.motion = DenseDecoder(c, cfg.decoder_width, 2, cfg.grid, "linear", rng)
        if "R" in cfg.tasks:
            self.s3r = S3RDecoder(c, cfg.up_channels, cfg.output_pairs,
                                  (cfg.n_bins, cfg.n_frames), rng)

    def encode(self, batch: dict) -> Tensor:
        parts = []
        if self.spec_encoder is not None:
            parts.append(self.spec_encoder(batch["logspec"]))
        if self.ddsp_encoder is not None:
            parts.append(self.ddsp_encoder(batch["f0"], batch["loudness"], batch["mfcc"]))
        if len(parts) > 1 and parts[0].shape[2:] != parts[1].shape[2:]:
            raise ConfigurationError(
                f"branch grids differ: {parts[0].shape[2:]} vs {parts[1].shape[2:]}")
        feat = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        return self.aspp(feat)

    def __call__(self, batch: dict, tasks: str | None = None) -> MultitaskPrediction:
        return forward_multitask(batch, self, tasks)


def forward_multitask(batch: dict, model: SoundNet, tasks: str | None = None) -> MultitaskPrediction:
    """One encoder pass, then one decoder pass per requested task."""
    tasks = model.cfg.tasks if tasks is None else "".join(c for c in "SDMR" if c in tasks.upper())
    missing = set(tasks) - set(model.cfg.tasks)
    if missing:
        raise ConfigurationError(
            f"model has no decoder for {', '.join(TASK_CODES[c] for c in sorted(missing))}")
    feat = model.encode(batch)
    out = MultitaskPrediction(features=feat)
    if "S" in tasks:
        out.semantic = model.semantic(feat)
    if "D" in tasks:
        out.depth = model.depth(feat)
    if "M" in tasks:
        out.flow = model.motion(feat)
    if "R" in tasks:
        out.masks = model.s3r(feat)
    return out


# -- S3R mask application -------------------------------------------------------

def apply_masks(masks: Tensor, ref_re: np.ndarray, ref_im: np.ndarray, pairs: int):
    """Complex-multiply predicted masks with the reference pair spectrogram.

    Returns (re, im) tensors shaped (N, P, 2, F, T): predicted difference spectrograms.
    """
    n = masks.shape[0]
    fb, tf = masks.shape[-2:]
    m = masks.reshape(n, pairs, 2, 2, fb, tf)
    mre, mim = m[:, :, :, 0], m[:, :, :, 1]
    sre = Tensor(np.asarray(ref_re)[:, None], dtype=masks.dtype)
    sim = Tensor(np.asarray(ref_im)[:, None], dtype=masks.dtype)
    return mre * sre - mim * sim, mre * sim + mim * sre


def s3r_reconstruct(mask: np.ndarray, input_specs: np.ndarray, input_waves: np.ndarray,
                    p: dsp.StftParams = dsp.StftParams()) -> np.ndarray:
    """Turn complex masks into waveforms of the predicted pairs.

    ``mask`` is complex (P, 2, F, T) or real (4P, F, T) planes; ``input_specs``
    complex (2, F, T); ``input_waves`` (2, L). Returns (P, 2, L): for every pair,
    input minus the ISTFT of the masked input spectrogram. Samples beyond the
    last full frame carry no predicted difference.
    """
    mask = np.asarray(mask)
    input_specs = np.asarray(input_specs)
    input_waves = np.asarray(input_waves, dtype=np.float64)
    if not np.iscomplexobj(mask):
        if mask.ndim != 3 or mask.shape[0] % 4:
            raise ConfigurationError(f"real mask planes must be (4P, F, T), got {mask.shape}")
        planes = mask.reshape(-1, 2, 2, *mask.shape[1:])
        mask = planes[:, :, 0] + 1j * planes[:, :, 1]
    if mask.shape[1:] != input_specs.shape:
        raise ConfigurationError(f"mask {mask.shape[1:]} does not match spectrogram {input_specs.shape}")
    if input_waves.shape[0] != 2:
        raise ConfigurationError("input_waves must hold the left and right reference channels")
    window = p.analysis_window()
    dsp.check_invertible(window, p.hop_length)
    diff = dsp.istft_array(mask * input_specs[None], window, p.hop_length)
    length = input_waves.shape[-1]
    padded = np.zeros(diff.shape[:-1] + (length,))
    n = min(length, diff.shape[-1])
    padded[..., :n] = diff[..., :n]
    return input_waves[None] - padded


def normalize_depth(depth_m: np.ndarray) -> np.ndarray:
    lo, hi = DEPTH_RANGE
    return (np.clip(depth_m, lo, hi) - lo) / (hi - lo)


def denormalize_depth(depth_n: np.ndarray) -> np.ndarray:
    lo, hi = DEPTH_RANGE
    return lo + np.clip(depth_n, 0.0, 1.0) * (hi - lo)
