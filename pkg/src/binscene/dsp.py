"""Signal-processing kernels: STFT/ISTFT, log-spectrograms, RMS normalization,
A-weighted loudness, MFCC, f0 estimation and amplitude envelopes.

Every function here is pure. Spectrogram arrays are laid out
``(..., bins, frames)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft
import scipy.signal

from .errors import (
    ConfigurationError,
    DegenerateStatisticsError,
    InvalidInputError,
    NonInvertibleError,
)

DEFAULT_TARGET_RMS = 0.1
LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int
    channel_id: Optional[int] = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise InvalidInputError("waveform must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channel_id is not None and not 1 <= self.channel_id <= 8:
            raise InvalidInputError(f"channel_id must be in 1..8, got {self.channel_id}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    window_size: int = 512
    hop_length: int = 160
    window: str = "hann"

    def __post_init__(self):
        if self.window_size <= 0 or self.window_size % 2:
            raise ConfigurationError(f"window_size must be positive and even, got {self.window_size}")
        if not 0 < self.hop_length <= self.window_size:
            raise ConfigurationError(
                f"hop_length must satisfy 0 < hop <= window_size, got {self.hop_length}")
        if self.window not in _WINDOWS:
            raise ConfigurationError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.window_size) // self.hop_length

    def analysis_window(self) -> np.ndarray:
        return _WINDOWS[self.window](self.window_size)


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {
    "hann": _periodic_hann,
    "rect": lambda n: np.ones(n),
}


@dataclass(frozen=True)
class ComplexSpectrogram:
    data: np.ndarray
    params: StftParams
    sample_rate: int

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.params.n_bins:
            raise InvalidInputError(
                f"spectrogram must have {self.params.n_bins} rows, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("spectrogram contains non-finite entries")

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DdspFeatures:
    f0: np.ndarray
    loudness: np.ndarray
    mfcc: np.ndarray  # (frames, n_coeffs)

    def __post_init__(self):
        n = self.f0.shape[0]
        if self.loudness.shape[0] != n or self.mfcc.shape[0] != n:
            raise InvalidInputError(
                f"frame counts disagree: f0 {n}, loudness {self.loudness.shape[0]}, "
                f"mfcc {self.mfcc.shape[0]}")
        if np.any(self.f0 < 0):
            raise InvalidInputError("f0 must be non-negative")


# -- array-level kernels (arbitrary leading dims) ------------------------------

def frame_signal(x: np.ndarray, size: int, hop: int) -> np.ndarray:
    """(..., n) -> (..., frames, size) strided view."""
    n = x.shape[-1]
    if n < size:
        raise InvalidInputError(f"signal of {n} samples is shorter than one window ({size})")
    view = np.lib.stride_tricks.sliding_window_view(x, size, axis=-1)
    return view[..., ::hop, :]


def stft_array(x: np.ndarray, window: np.ndarray, hop: int) -> np.ndarray:
    frames = frame_signal(x, window.size, hop) * window
    return np.swapaxes(np.fft.rfft(frames, axis=-1), -1, -2)


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """(..., n_frames, size) -> (..., size + (n_frames - 1) * hop)."""
    n_frames, size = frames.shape[-2:]
    out = np.zeros(frames.shape[:-2] + (size + (n_frames - 1) * hop,), dtype=frames.dtype)
    for t in range(n_frames):
        out[..., t * hop:t * hop + size] += frames[..., t, :]
    return out


def window_square_sum(window: np.ndarray, hop: int, n_frames: int) -> np.ndarray:
    sq = np.broadcast_to(window ** 2, (n_frames, window.size))
    return overlap_add(np.ascontiguousarray(sq), hop)


def _steady_state(window: np.ndarray, hop: int) -> np.ndarray:
    """One hop of the window-square overlap-add sum far from either edge."""
    reps = -(-window.size // hop) + 1
    return window_square_sum(window, hop, 2 * reps)[reps * hop:reps * hop + hop]


def check_invertible(window: np.ndarray, hop: int) -> None:
    """Raise if the steady-state overlap-add of ``window**2`` touches zero."""
    steady = _steady_state(window, hop)
    if steady.min() <= 1e-10 * max(steady.max(), 1e-300):
        raise NonInvertibleError(
            f"window of size {window.size} with hop {hop} has zeros in its overlap-add sum")


# Output samples whose window-square sum falls below this fraction of its
# steady-state minimum are left at zero (the first and last ~100 samples at
# 512/160). Dividing there would amplify any inconsistency in a modified
# spectrogram without bound.
ISTFT_COVERAGE_FLOOR = 0.1


def istft_gain(window: np.ndarray, hop: int, n_frames: int) -> np.ndarray:
    """Per-sample factor applied after overlap-add: 1/wsum where covered, else 0."""
    wsum = window_square_sum(window, hop, n_frames)
    ok = wsum > ISTFT_COVERAGE_FLOOR * _steady_state(window, hop).min()
    return np.where(ok, 1.0 / np.where(ok, wsum, 1.0), 0.0)


def istft_array(X: np.ndarray, window: np.ndarray, hop: int) -> np.ndarray:
    frames = np.fft.irfft(np.swapaxes(X, -1, -2), n=window.size, axis=-1) * window
    return overlap_add(frames, hop) * istft_gain(window, hop, X.shape[-1])


# -- operations --------------------------------------------------------------

def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def rms_normalize(w: Waveform, dataset_mean_rms: float,
                  target_rms: float = DEFAULT_TARGET_RMS) -> Waveform:
    if not np.isfinite(dataset_mean_rms) or dataset_mean_rms <= 0:
        raise DegenerateStatisticsError(
            f"dataset mean RMS must be positive, got {dataset_mean_rms}")
    if target_rms <= 0:
        raise InvalidInputError(f"target_rms must be positive, got {target_rms}")
    return Waveform(w.samples * (target_rms / dataset_mean_rms), w.sample_rate, w.channel_id)


def stft(w: Waveform, p: StftParams = StftParams()) -> ComplexSpectrogram:
    if len(w) < p.window_size:
        raise InvalidInputError(
            f"waveform has {len(w)} samples, fewer than one window ({p.window_size})")
    data = stft_array(w.samples, p.analysis_window(), p.hop_length)
    return ComplexSpectrogram(data, p, w.sample_rate)


def istft(s: ComplexSpectrogram) -> Waveform:
    if s.frames < 1:
        raise InvalidInputError("spectrogram has no frames")
    window = s.params.analysis_window()
    check_invertible(window, s.params.hop_length)
    return Waveform(istft_array(s.data, window, s.params.hop_length), s.sample_rate)


def log_spectrogram(s: ComplexSpectrogram, floor_eps: float = LOG_FLOOR) -> np.ndarray:
    if floor_eps <= 0:
        raise InvalidInputError(f"floor_eps must be positive, got {floor_eps}")
    return np.log(np.abs(s.data) + floor_eps)


def a_weighting_db(freqs: np.ndarray) -> np.ndarray:
    """IEC 61672 A-curve, renormalized so the 1 kHz gain is exactly 0 dB."""
    def response(f):
        f2 = np.asarray(f, dtype=np.float64) ** 2
        num = 12194.0 ** 2 * f2 ** 2
        den = ((f2 + 20.6 ** 2) * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
               * (f2 + 12194.0 ** 2))
        return num / den

    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(response(freqs) / response(1000.0))


def power_spectrum(w: Waveform, p: StftParams) -> np.ndarray:
    """Power per (bin, frame), scaled so a unit sine peaks near 1/4."""
    window = p.analysis_window()
    X = stft(w, p).data / window.sum()
    return np.abs(X) ** 2


def a_weighted_loudness(w: Waveform, p: StftParams = StftParams(), mean_db: float = 0.0,
                        std_db: float = 1.0) -> np.ndarray:
    """Per-frame A-weighted level in dB, standardized by corpus ``mean_db``/``std_db``."""
    if std_db <= 0:
        raise DegenerateStatisticsError(f"loudness std must be positive, got {std_db}")
    freqs = np.fft.rfftfreq(p.window_size, 1.0 / w.sample_rate)
    gain = 10.0 ** (a_weighting_db(freqs) / 10.0)  # 0 at DC
    power = (power_spectrum(w, p) * gain[:, None]).sum(axis=0)
    level = 10.0 * np.log10(np.maximum(power, LOG_FLOOR))
    return (level - mean_db) / std_db


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, window_size: int, n_mels: int,
                   fmin: float = 0.0, fmax: Optional[float] = None) -> np.ndarray:
    """Triangular HTK-mel filters, each row normalized to unit sum."""
    n_bins = window_size // 2 + 1
    if n_mels < 1 or n_mels > n_bins:
        raise ConfigurationError(f"n_mels={n_mels} must be in 1..{n_bins}")
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.fft.rfftfreq(window_size, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    # Filters narrower than the bin spacing collapse onto their nearest bin.
    sums = fb.sum(axis=1)
    for i in np.flatnonzero(sums <= 0):
        fb[i, np.argmin(np.abs(freqs - mid[i, 0]))] = 1.0
    return fb / fb.sum(axis=1, keepdims=True)


def mfcc_from_power(power: np.ndarray, filterbank: np.ndarray, n_coeffs: int) -> np.ndarray:
    """(bins, frames) power -> (frames, n_coeffs)."""
    mel = filterbank @ power
    logmel = np.log(mel + LOG_FLOOR)
    return scipy.fft.dct(logmel, type=2, axis=0, norm="ortho")[:n_coeffs].T


def mfcc(w: Waveform, p: StftParams = StftParams(), n_mels: int = 32,
         n_coeffs: int = 16) -> np.ndarray:
    if n_coeffs > n_mels:
        raise ConfigurationError(f"n_coeffs={n_coeffs} exceeds n_mels={n_mels}")
    fb = mel_filterbank(w.sample_rate, p.window_size, n_mels)
    return mfcc_from_power(power_spectrum(w, p), fb, n_coeffs)


def estimate_f0(w: Waveform, p: StftParams = StftParams(), fmin: float = 50.0,
                fmax: float = 1000.0, voicing_threshold: float = 0.5) -> np.ndarray:
    """Per-frame pitch from the normalized autocorrelation of each analysis frame.

    The first lag whose normalized correlation reaches 90% of the frame's best
    peak is taken, which keeps harmonics from winning over the fundamental.
    The peak is refined by parabolic interpolation. Unvoiced frames are 0.
    Resolution at 16 kHz is well under 1 Hz for tones below 500 Hz.
    """
    sr = w.sample_rate
    if not 0 < fmin < fmax < sr / 2:
        raise ConfigurationError(f"need 0 < fmin < fmax < {sr / 2}, got {fmin}, {fmax}")
    n = p.window_size
    lag_min = max(1, int(np.floor(sr / fmax)))
    lag_max = min(n - 2, int(np.ceil(sr / fmin)))
    frames = frame_signal(w.samples, n, p.hop_length)
    frames = frames - frames.mean(axis=-1, keepdims=True)

    spec = np.fft.rfft(frames, n=2 * n, axis=-1)
    acf = np.fft.irfft(np.abs(spec) ** 2, axis=-1)[:, :n]
    sq = frames ** 2
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(sq, axis=-1)], axis=-1)
    lags = np.arange(n)
    head = csum[:, n - lags]              # energy of x[0 : n - lag]
    tail = csum[:, n:n + 1] - csum[:, lags]  # energy of x[lag : n]
    denom = np.sqrt(head * tail)
    energy = csum[:, n]
    nccf = np.where(denom > 1e-12 * np.maximum(energy[:, None], 1e-300), acf / np.maximum(denom, 1e-300), 0.0)

    f0 = np.zeros(frames.shape[0])
    silent = energy <= 1e-10 * n
    window = nccf[:, lag_min:lag_max + 1]
    for i in range(frames.shape[0]):
        if silent[i]:
            continue
        r = window[i]
        interior = np.flatnonzero((r[1:-1] >= r[:-2]) & (r[1:-1] > r[2:])) + 1
        if interior.size == 0:
            continue
        best = r[interior].max()
        if best < voicing_threshold:
            continue
        k = interior[np.argmax(r[interior] >= 0.9 * best)]
        a, b, c = r[k - 1], r[k], r[k + 1]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
        lag = lag_min + k + float(np.clip(shift, -0.5, 0.5))
        f0[i] = np.clip(sr / lag, fmin, fmax)
    return f0


def envelope(w: Waveform) -> np.ndarray:
    """Analytic-signal magnitude (FFT-based Hilbert transform over the full length)."""
    return np.abs(scipy.signal.hilbert(w.samples))


def ddsp_features(w: Waveform, p: StftParams = StftParams(), n_mels: int = 32,
                  n_coeffs: int = 16, fmin: float = 50.0, fmax: float = 1000.0,
                  loudness_mean_db: float = 0.0, loudness_std_db: float = 1.0) -> DdspFeatures:
    return DdspFeatures(
        f0=estimate_f0(w, p, fmin, fmax),
        loudness=a_weighted_loudness(w, p, loudness_mean_db, loudness_std_db),
        mfcc=mfcc(w, p, n_mels, n_coeffs),
    )
