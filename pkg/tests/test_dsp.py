import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binscene import dsp
from binscene.errors import (ConfigurationError, DegenerateStatisticsError, InvalidInputError,
                             NonInvertibleError)

SR = 16000
P = dsp.StftParams()


def tone(freq, n=SR, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / SR)


def interior(p: dsp.StftParams, n_frames: int) -> slice:
    g = dsp.istft_gain(p.analysis_window(), p.hop_length, n_frames)
    nz = np.flatnonzero(g)
    return slice(nz[0], nz[-1] + 1)


def naive_stft(x, window, hop):
    """Direct DFT sum per frame, independent of numpy's FFT."""
    size = window.size
    n_frames = 1 + (x.size - size) // hop
    k = np.arange(size // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(size)[None] / size)
    return np.stack([basis @ (x[t * hop:t * hop + size] * window) for t in range(n_frames)], axis=1)


class TestTypes:
    def test_waveform_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            dsp.Waveform(np.array([0.0, np.nan]), SR)

    def test_waveform_rejects_bad_channel(self):
        with pytest.raises(InvalidInputError):
            dsp.Waveform(np.zeros(4), SR, channel_id=9)

    @pytest.mark.parametrize("size,hop", [(511, 160), (512, 0), (512, 513)])
    def test_stft_params_invariants(self, size, hop):
        with pytest.raises(ConfigurationError):
            dsp.StftParams(size, hop)

    def test_reference_frame_params(self):
        assert (P.window_size, P.hop_length, P.n_bins) == (512, 160, 257)


class TestRmsNormalize:
    def test_unit_scale_is_identity(self):
        w = dsp.Waveform(np.random.default_rng(0).standard_normal(100), SR)
        out = dsp.rms_normalize(w, 0.1, 0.1)
        assert np.array_equal(out.samples, w.samples)

    def test_constant_against_loop(self):
        w = dsp.Waveform(np.full(50, 0.2), SR)
        out = dsp.rms_normalize(w, 0.2, 0.1)
        expected = [s * (0.1 / 0.2) for s in w.samples]
        assert np.allclose(out.samples, expected, rtol=0, atol=1e-15)
        assert np.allclose(out.samples, 0.1)

    def test_default_target(self):
        assert dsp.DEFAULT_TARGET_RMS == 0.1

    def test_zero_mean_rms(self):
        with pytest.raises(DegenerateStatisticsError):
            dsp.rms_normalize(dsp.Waveform(np.ones(4), SR), 0.0)


class TestStft:
    def test_one_second_shape(self):
        s = dsp.stft(dsp.Waveform(np.zeros(SR), SR), P)
        assert s.data.shape == (257, 97)
        assert P.n_frames(SR) == 1 + 15488 // 160 == 97

    def test_96k_bins(self):
        s = dsp.stft(dsp.Waveform(np.zeros(96000), 96000), P)
        assert s.bins == 257

    def test_zero_waveform(self):
        assert not np.any(dsp.stft(dsp.Waveform(np.zeros(2048), SR), P).data)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            dsp.stft(dsp.Waveform(np.zeros(100), SR), P)

    def test_matches_direct_dft(self):
        x = np.random.default_rng(3).standard_normal(1500)
        w = P.analysis_window()
        assert np.allclose(dsp.stft_array(x, w, 160), naive_stft(x, w, 160), atol=1e-9)

    def test_periodic_hann(self):
        w = P.analysis_window()
        assert w[0] == 0.0 and np.isclose(w[256], 1.0)
        assert np.allclose(w[1:], w[1:][::-1])

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x1, x2 = rng.standard_normal((2, 2048))
        win = P.analysis_window()
        lhs = dsp.stft_array(a * x1 + b * x2, win, 160)
        rhs = a * dsp.stft_array(x1, win, 160) + b * dsp.stft_array(x2, win, 160)
        scale = max(np.linalg.norm(rhs), 1e-12)
        assert np.linalg.norm(lhs - rhs) / scale < 1e-9 or np.linalg.norm(lhs - rhs) < 1e-9

    def test_parseval_per_frame(self):
        x = np.random.default_rng(4).standard_normal(4000)
        win = P.analysis_window()
        frames = dsp.frame_signal(x, 512, 160) * win
        spec = dsp.stft_array(x, win, 160)
        # one-sided spectrum: interior bins count twice
        weight = np.full(257, 2.0)
        weight[[0, -1]] = 1.0
        e_freq = (weight[:, None] * np.abs(spec) ** 2).sum(axis=0) / 512
        e_time = (frames ** 2).sum(axis=1)
        assert np.max(np.abs(e_freq - e_time) / e_time) < 1e-6


class TestIstft:
    def test_output_length(self):
        s = dsp.stft(dsp.Waveform(np.random.default_rng(0).standard_normal(SR), SR), P)
        assert len(dsp.istft(s)) == 512 + 96 * 160

    def test_zero_spectrogram(self):
        s = dsp.ComplexSpectrogram(np.zeros((257, 10), complex), P, SR)
        assert not np.any(dsp.istft(s).samples)

    def test_sine_round_trip(self):
        x = tone(440)
        y = dsp.istft(dsp.stft(dsp.Waveform(x, SR), P)).samples
        sl = interior(P, 97)
        assert np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl]) < 1e-5

    @settings(max_examples=20, deadline=None)
    @given(st.integers(4 * 512, 6000), st.integers(0, 2**31 - 1))
    def test_random_round_trip(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        spec = dsp.stft(dsp.Waveform(x, SR), P)
        y = dsp.istft(spec).samples
        sl = interior(P, spec.frames)
        assert np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl]) < 1e-5

    def test_edges_are_zeroed_not_amplified(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((257, 97)) + 1j * rng.standard_normal((257, 97))
        y = dsp.istft_array(X, P.analysis_window(), 160)
        sl = interior(P, 97)
        assert not np.any(y[:sl.start]) and not np.any(y[sl.stop:])
        assert np.abs(y).max() < 10 * np.abs(y[sl]).max()

    def test_non_invertible(self):
        s = dsp.ComplexSpectrogram(np.zeros((257, 4), complex), dsp.StftParams(512, 512), SR)
        with pytest.raises(NonInvertibleError):
            dsp.istft(s)


class TestLogSpectrogram:
    def test_zero(self):
        s = dsp.ComplexSpectrogram(np.zeros((257, 3), complex), P, SR)
        assert np.allclose(dsp.log_spectrogram(s, 1e-7), np.log(1e-7))

    def test_unit_cell(self):
        data = np.zeros((257, 3), complex)
        data[5, 1] = 1.0
        out = dsp.log_spectrogram(dsp.ComplexSpectrogram(data, P, SR), 1e-12)
        assert abs(out[5, 1]) < 1e-11

    def test_monotone(self):
        data = np.zeros((257, 1), complex)
        data[:, 0] = np.linspace(0, 5, 257) * np.exp(1j * np.linspace(0, 3, 257))
        out = dsp.log_spectrogram(dsp.ComplexSpectrogram(data, P, SR))[:, 0]
        assert np.all(np.diff(out) > 0)


class TestLoudness:
    def test_a_weight_1khz(self):
        assert abs(dsp.a_weighting_db(np.array([1000.0]))[0]) < 1e-9

    def test_a_weight_tabulated(self):
        # IEC 61672 nominal A-weights
        table = {50: -30.2, 100: -19.1, 500: -3.2, 2000: 1.2, 4000: 1.0}
        got = dsp.a_weighting_db(np.array(list(table), float))
        assert np.allclose(got, list(table.values()), atol=0.15)

    def test_1khz_louder_than_50hz(self):
        hi = dsp.a_weighted_loudness(dsp.Waveform(tone(1000), SR), P)
        lo = dsp.a_weighted_loudness(dsp.Waveform(tone(50), SR), P)
        assert np.all(hi > lo)
        # Hann leakage at 31.25 Hz bin spacing spreads 50 Hz into the 62.5 Hz bin,
        # which the curve attenuates less, so the gap sits a little under 30 dB.
        assert 25.0 < np.median(hi - lo) < 31.0

    def test_doubling_adds_6db(self):
        x = np.random.default_rng(1).standard_normal(SR)
        a = dsp.a_weighted_loudness(dsp.Waveform(x, SR), P)
        b = dsp.a_weighted_loudness(dsp.Waveform(2 * x, SR), P)
        assert np.allclose(b - a, 20 * np.log10(2), atol=1e-9)

    def test_silence_is_floored(self):
        out = dsp.a_weighted_loudness(dsp.Waveform(np.zeros(SR), SR), P)
        assert np.all(np.isfinite(out)) and np.allclose(out, 10 * np.log10(dsp.LOG_FLOOR))


class TestMfcc:
    def test_shape(self):
        m = dsp.mfcc(dsp.Waveform(tone(300), SR), P, 32, 16)
        assert m.shape == (97, 16)

    def test_flat_spectrum_goes_to_c0(self):
        # filterbank rows sum to one, so a flat power spectrum fills every band equally
        fb = dsp.mel_filterbank(SR, 512, 32)
        c = dsp.mfcc_from_power(np.full((257, 3), 4.0), fb, 16)
        assert np.allclose(c[:, 0], np.sqrt(32) * np.log(4.0 + 1e-7))
        assert np.allclose(c[:, 1:], 0, atol=1e-9)

    def test_zero_frame(self):
        c = dsp.mfcc(dsp.Waveform(np.zeros(SR), SR), P, 32, 16)
        assert np.allclose(c[:, 0], np.sqrt(32) * np.log(1e-7))
        assert np.allclose(c[:, 1:], 0, atol=1e-9)

    def test_deterministic(self):
        w = dsp.Waveform(np.random.default_rng(2).standard_normal(SR), SR)
        assert np.array_equal(dsp.mfcc(w, P), dsp.mfcc(w, P))

    def test_too_many_mels(self):
        with pytest.raises(ConfigurationError):
            dsp.mfcc(dsp.Waveform(np.zeros(SR), SR), P, n_mels=300)


class TestF0:
    @pytest.mark.parametrize("f", [80.0, 150.0, 440.0, 500.0])
    def test_pure_tone(self, f):
        f0 = dsp.estimate_f0(dsp.Waveform(tone(f), SR), P)
        assert np.all(np.abs(f0 - f) <= 2.0)

    def test_silence(self):
        assert not np.any(dsp.estimate_f0(dsp.Waveform(np.zeros(SR), SR), P))

    def test_square_wave_fundamental(self):
        x = np.sign(tone(220))
        f0 = dsp.estimate_f0(dsp.Waveform(x, SR), P)
        assert np.all(np.abs(f0 - 220) <= 2.0)

    def test_range_bounds(self):
        f0 = dsp.estimate_f0(dsp.Waveform(np.random.default_rng(0).standard_normal(SR), SR), P)
        assert np.all((f0 == 0) | ((f0 >= 50) & (f0 <= 1000)))


class TestEnvelope:
    def test_sine(self):
        env = dsp.envelope(dsp.Waveform(tone(500, amp=0.7), SR))
        assert np.allclose(env[1000:-1000], 0.7, atol=1e-3)

    def test_zero(self):
        assert not np.any(dsp.envelope(dsp.Waveform(np.zeros(64), SR)))

    def test_am_demodulation(self):
        t = np.arange(SR) / SR
        a = 1.0 + 0.5 * np.sin(2 * np.pi * 3 * t)
        env = dsp.envelope(dsp.Waveform(a * np.sin(2 * np.pi * 1000 * t), SR))
        assert np.max(np.abs(env - a)[1000:-1000]) < 1e-2

    def test_nonnegative(self):
        env = dsp.envelope(dsp.Waveform(np.random.default_rng(0).standard_normal(300), SR))
        assert np.all(env >= 0)


def test_ddsp_features_silence():
    d = dsp.ddsp_features(dsp.Waveform(np.zeros(SR), SR), P)
    assert d.f0.shape == d.loudness.shape == (97,)
    assert not np.any(d.f0)
    assert np.all(np.isfinite(d.mfcc))
