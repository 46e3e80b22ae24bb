"""Training losses (differentiable, on :class:`Tensor`) and evaluation metrics (numpy)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import InvalidInputError
from .numerics import functional as F
from .numerics.tensor import Tensor, absolute, as_tensor, clamp_min, log, make, tsum

PROB_CLAMP = 1e-12
SPECTRAL_LOG_FLOOR = 1e-7
TASKS = ("semantic", "depth", "motion", "s3r")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.2
    lambda2: float = 0.2
    lambda3: float = 0.2
    alpha_spec: float = 1.0
    fft_sizes: tuple = (256, 128, 64)

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.alpha_spec) < 0:
            raise InvalidInputError("loss weights must be non-negative")

    @classmethod
    def for_encoder(cls, kind: str) -> "LossWeights":
        """Published presets: lambda3 drops to 0.02 whenever a DDSP branch is present."""
        return cls(lambda3=0.2 if kind == "spectrogram" else 0.02)


# -- losses -------------------------------------------------------------------

def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean of -log p(target) over pixels; ``probs`` is (..., C, H, W) after softmax."""
    labels = np.asarray(labels)
    n_classes = probs.shape[-3]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise InvalidInputError(f"labels must lie in 0..{n_classes - 1}")
    if probs.shape[:-3] + probs.shape[-2:] != labels.shape:
        raise InvalidInputError(f"labels {labels.shape} do not match predictions {probs.shape}")
    onehot = (np.arange(n_classes).reshape(-1, 1, 1) == labels[..., None, :, :]).astype(probs.dtype)
    p_target = tsum(probs * Tensor(onehot, dtype=probs.dtype), axis=-3)
    return -log(clamp_min(p_target, PROB_CLAMP)).mean()


def l2_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def complex_l2_loss(pred_re: Tensor, pred_im: Tensor, target_re, target_im) -> Tensor:
    """Mean squared modulus of the complex difference."""
    dr = pred_re - as_tensor(target_re, pred_re)
    di = pred_im - as_tensor(target_im, pred_im)
    return (dr * dr + di * di).mean()


def multiscale_spectral_loss(pred: Tensor, target, w: LossWeights = LossWeights(),
                             overlap: float = 0.75) -> Tensor:
    """Sum over FFT sizes of mean L1 distance between magnitudes plus ``alpha`` times
    the mean L1 distance between log-magnitudes."""
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    total = None
    for size in w.fft_sizes:
        window = dsp._periodic_hann(size)
        hop = max(1, int(size * (1 - overlap)))
        mp = F.magnitude(*F.stft(pred, window, hop))
        mt = F.magnitude(*F.stft(target, window, hop))
        term = absolute(mp - mt).mean()
        if w.alpha_spec:
            term = term + w.alpha_spec * absolute(
                log(mp + SPECTRAL_LOG_FLOOR) - log(mt + SPECTRAL_LOG_FLOOR)).mean()
        total = term if total is None else total + term
    return total


def total_loss(parts: dict, w: LossWeights = LossWeights()) -> Tensor:
    """Semantic + l1*depth + l2*motion + l3*s3r over whichever parts are present.

    The forward value is an exactly rounded sum of the weighted terms.
    """
    coeff = {"semantic": 1.0, "depth": w.lambda1, "motion": w.lambda2, "s3r": w.lambda3}
    unknown = set(parts) - set(coeff)
    if unknown:
        raise InvalidInputError(f"unknown loss parts {sorted(unknown)}")
    terms = [as_tensor(parts[name]) for name in TASKS if name in parts]
    weights = [coeff[name] for name in TASKS if name in parts]
    if not terms:
        return Tensor(0.0)
    dtype = terms[0].dtype
    value = math.fsum(c * float(t.data) for c, t in zip(weights, terms))
    return make(np.asarray(value, dtype=dtype), tuple(terms),
                lambda g: tuple(g * c for c in weights))


# -- metrics ------------------------------------------------------------------

def miou(pred: np.ndarray, gt: np.ndarray, classes=(1, 2, 3)) -> tuple[dict, float]:
    """Per-class IoU and their mean; a class absent from both maps is left out."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    per_class = {}
    for c in classes:
        p, g = pred == c, gt == c
        union = np.count_nonzero(p | g)
        per_class[c] = np.count_nonzero(p & g) / union if union else float("nan")
    defined = [v for v in per_class.values() if not np.isnan(v)]
    return per_class, (float(np.mean(defined)) if defined else float("nan"))


def depth_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    valid = gt > 0
    if not valid.all():
        warnings.warn(f"excluding {np.count_nonzero(~valid)} non-positive ground-truth depth pixels")
    p, g = pred[valid], gt[valid]
    err = p - g
    sq = err * err
    return {"abs_rel": float(np.mean(np.abs(err) / g)), "sq_rel": float(np.mean(sq / g)),
            "rmse": float(np.sqrt(np.mean(sq))), "mse": float(np.mean(sq))}


def epe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean endpoint error; the flow-vector axis is third from last: (..., 2, H, W)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.sqrt(np.sum((pred - gt) ** 2, axis=-3))))


def s3r_metrics(pred: np.ndarray, gt: np.ndarray, p: dsp.StftParams = dsp.StftParams(),
                sample_rate: int = 16000) -> dict:
    """Spectrogram MSE and envelope error per ear for (2, n) left/right waveforms."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    out = {}
    for ear in range(pred.shape[0]):
        wp = dsp.Waveform(pred[ear], sample_rate)
        wg = dsp.Waveform(gt[ear], sample_rate)
        diff = dsp.stft(wp, p).data - dsp.stft(wg, p).data
        out[f"mse{ear + 1}"] = float(np.mean(np.abs(diff) ** 2))
        out[f"env{ear + 1}"] = float(np.mean((dsp.envelope(wp) - dsp.envelope(wg)) ** 2))
    return out
