"""Supervision-transfer labels: per-pixel mode background, sound-making masks and
training-sample selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

CLASS_NAMES = {0: "background", 1: "car", 2: "tram", 3: "motorcycle"}
SOUND_MAKING = frozenset({1, 2, 3})
DEFAULT_ENERGY_THRESHOLD = 0.01
DEFAULT_MIN_DIFF_FRACTION = 0.05


@dataclass
class LabelSequence:
    frames: np.ndarray  # (T, H, W) small non-negative integers
    class_vocabulary: dict = field(default_factory=lambda: dict(CLASS_NAMES))

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise InvalidInputError(f"label sequence must be (T>=1, H, W), got {frames.shape}")
        self.frames = frames


def mode_background(seq: LabelSequence | np.ndarray) -> np.ndarray:
    """Per-pixel most frequent value across frames; ties go to the smallest value.

    Works for label maps and for integer-quantized single-channel intensities alike.
    """
    frames = seq.frames if isinstance(seq, LabelSequence) else np.asarray(seq)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise InvalidInputError(f"need a non-empty (T, H, W) sequence, got shape {frames.shape}")
    if not np.issubdtype(frames.dtype, np.integer):
        if not np.all(frames == np.round(frames)):
            raise InvalidInputError("mode_background needs integer-valued frames")
        frames = frames.astype(np.int64)
    if frames.min() < 0:
        raise InvalidInputError("mode_background needs non-negative values")
    t, h, w = frames.shape
    n_values = int(frames.max()) + 1
    flat = frames.reshape(t, -1)
    pix = np.arange(h * w)
    counts = np.zeros((h * w, n_values), dtype=np.int64)
    for frame in flat:
        counts[pix, frame] += 1
    # argmax returns the first (smallest) value among tied maxima.
    return counts.argmax(axis=1).reshape(h, w).astype(frames.dtype)


def soundmaking_mask(y_t: np.ndarray, y_bg: np.ndarray, targets=SOUND_MAKING) -> np.ndarray:
    y_t, y_bg = np.asarray(y_t), np.asarray(y_bg)
    if y_t.shape != y_bg.shape:
        raise InvalidInputError(f"label grids differ in shape: {y_t.shape} vs {y_bg.shape}")
    return (np.isin(y_t, list(targets)) & (y_t != y_bg)).astype(np.uint8)


def select_sample(audio: np.ndarray, y_t: np.ndarray, y_bg: np.ndarray,
                  energy_threshold: float = DEFAULT_ENERGY_THRESHOLD,
                  min_diff_fraction: float = DEFAULT_MIN_DIFF_FRACTION) -> bool:
    """Keep a clip if it is loud enough and its labels depart enough from the background."""
    audio = np.asarray(audio, dtype=np.float64)
    level = np.sqrt(np.mean(audio * audio)) if audio.size else 0.0
    if level < energy_threshold:
        return False
    y_t, y_bg = np.asarray(y_t), np.asarray(y_bg)
    if y_t.shape != y_bg.shape:
        raise InvalidInputError(f"label grids differ in shape: {y_t.shape} vs {y_bg.shape}")
    return float(np.mean(y_t != y_bg)) >= min_diff_fraction


def distilled_labels(y_t: np.ndarray, y_bg: np.ndarray, targets=SOUND_MAKING) -> np.ndarray:
    """Training target: the target frame's labels kept only on sound-making pixels."""
    return np.where(soundmaking_mask(y_t, y_bg, targets) == 1, y_t, 0)
