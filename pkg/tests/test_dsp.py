"""Signal-processing tests: Mel scale, filterbank, STFT/ISTFT, Mel
spectrograms, pseudo-inverse recovery, Griffin-Lim and resampling."""

import numpy as np
import pytest

from melgen import dsp
from melgen.errors import ConfigError

from conftest import sine_wave


# ---------------------------------------------------------------------------
# Mel scale
# ---------------------------------------------------------------------------


class TestMelScale:
    def test_zero_fixed_point(self):
        assert dsp.hz_to_mel(0.0) == 0.0
        assert dsp.mel_to_hz(0.0) == 0.0

    def test_reference_value(self):
        # m(700) = 2595 * log10(2)
        assert dsp.hz_to_mel(700.0) == pytest.approx(781.1728387480312, rel=1e-12)
        assert dsp.mel_to_hz(781.1728387480312) == pytest.approx(700.0, rel=1e-6)

    def test_round_trip_dense(self):
        freqs = np.geomspace(20.0, 11025.0, 1000)
        back = dsp.mel_to_hz(dsp.hz_to_mel(freqs))
        assert np.max(np.abs(back - freqs) / freqs) < 1e-9

    def test_monotone(self):
        freqs = np.linspace(0.0, 11025.0, 500)
        mels = dsp.hz_to_mel(freqs)
        assert np.all(np.diff(mels) > 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            dsp.hz_to_mel(-1.0)
        with pytest.raises(ValueError):
            dsp.mel_to_hz(-0.5)


# ---------------------------------------------------------------------------
# Filterbank
# ---------------------------------------------------------------------------


class TestFilterbank:
    def test_shape_and_nonnegativity(self):
        p = dsp.SpectroParams(22050, 2048, 800, 180)
        fb = dsp.build_mel_filterbank(p)
        assert fb.weights.shape == (180, 1025)
        assert np.all(fb.weights >= 0)

    def test_every_row_has_support(self):
        p = dsp.SpectroParams(22050, 2048, 800, 180)
        fb = dsp.build_mel_filterbank(p)
        assert np.all(fb.weights.max(axis=1) > 0)

    def test_rows_are_contiguous_triangles(self):
        p = dsp.SpectroParams(8000, 512, 128, 24)
        fb = dsp.build_mel_filterbank(p)
        centers = []
        for row in fb.weights:
            (support,) = np.nonzero(row)
            assert np.array_equal(support, np.arange(support[0], support[-1] + 1))
            peak = support[np.argmax(row[support])]
            # single rise then fall
            assert np.all(np.diff(row[support[0]:peak + 1]) >= 0)
            assert np.all(np.diff(row[peak:support[-1] + 1]) <= 0)
            centers.append(peak)
        assert np.all(np.diff(centers) > 0)

    def test_flat_spectrum_gives_row_sums(self):
        p = dsp.SpectroParams(8000, 512, 128, 24)
        fb = dsp.build_mel_filterbank(p)
        flat = np.ones((p.n_bins, 3))
        out = fb.weights @ flat
        np.testing.assert_allclose(out, np.tile(fb.weights.sum(axis=1)[:, None], 3))

    def test_too_many_mels_rejected(self):
        with pytest.raises(ConfigError):
            dsp.build_mel_filterbank(dsp.SpectroParams(8000, 256, 64, 400))


# ---------------------------------------------------------------------------
# STFT / ISTFT
# ---------------------------------------------------------------------------


class TestStft:
    def test_zero_in_zero_out(self, small_params):
        w = dsp.Waveform(np.zeros(4096), 8000)
        assert np.all(dsp.stft(w, small_params) == 0)

    def test_frame_count(self, small_params):
        n = small_params.stft_win_sz + 3 * small_params.stft_hop_sz
        w = dsp.Waveform(np.zeros(n), 8000)
        assert dsp.stft(w, small_params).shape == (small_params.n_bins, 4)

    def test_too_short_rejected(self, small_params):
        with pytest.raises(ValueError):
            dsp.stft(dsp.Waveform(np.zeros(100), 8000), small_params)

    def test_bin_centered_sinusoid_peaks_at_bin(self, small_params):
        k = 40
        freq = k * small_params.sample_rate / small_params.stft_win_sz
        w = sine_wave(freq, 1.0, small_params.sample_rate)
        mag = np.abs(dsp.stft(w, small_params))
        assert np.all(np.argmax(mag, axis=0) == k)

    def test_linearity(self, small_params):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(2048)
        y = rng.standard_normal(2048)
        a, b = 0.7, -1.3
        lhs = dsp.stft(dsp.Waveform(a * x + b * y, 8000), small_params)
        rhs = (a * dsp.stft(dsp.Waveform(x, 8000), small_params)
               + b * dsp.stft(dsp.Waveform(y, 8000), small_params))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())


class TestIstft:
    def test_zero_in_zero_out(self, small_params):
        s = np.zeros((small_params.n_bins, 5), dtype=complex)
        assert np.all(dsp.istft(s, small_params).samples == 0)

    def test_single_frame_length(self, small_params):
        s = np.zeros((small_params.n_bins, 1), dtype=complex)
        assert len(dsp.istft(s, small_params).samples) == small_params.stft_win_sz

    @pytest.mark.parametrize("seed", range(3))
    def test_round_trip_interior(self, small_params, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-0.8, 0.8, 6000)
        rec = dsp.istft(dsp.stft(dsp.Waveform(x, 8000), small_params), small_params).samples
        win = small_params.stft_win_sz
        n = min(len(rec), len(x))
        inner = slice(win, n - win)
        err = np.linalg.norm(rec[inner] - x[inner]) / np.linalg.norm(x[inner])
        assert err < 1e-6

    def test_overlap_add_violation_rejected(self):
        p = dsp.SpectroParams(8000, 512, 512, 16)  # hop == win: Hann never covers
        s = np.zeros((p.n_bins, 4), dtype=complex)
        with pytest.raises(ConfigError):
            dsp.istft(s, p)

    def test_bin_count_validated(self, small_params):
        with pytest.raises(ValueError):
            dsp.istft(np.zeros((7, 4), dtype=complex), small_params)


# ---------------------------------------------------------------------------
# Mel spectrogram and inversion
# ---------------------------------------------------------------------------


class TestMelSpectrogram:
    def test_silence(self, small_params):
        m = dsp.mel_spectrogram(dsp.Waveform(np.zeros(2048), 8000), small_params)
        assert np.all(m.values == 0)

    def test_shape(self, small_params):
        w = dsp.Waveform(np.zeros(6000), 8000)
        m = dsp.mel_spectrogram(w, small_params)
        assert m.values.shape == (small_params.num_mels, small_params.n_frames(6000))

    def test_tone_lands_in_expected_band(self, small_params):
        w = sine_wave(440.0, 1.0, small_params.sample_rate)
        m = dsp.mel_spectrogram(w, small_params)
        fb = dsp.build_mel_filterbank(small_params)
        # oracle: the band whose filter weight at the tone's FFT bin is largest
        bin_idx = int(round(440.0 * small_params.stft_win_sz / small_params.sample_rate))
        expected = int(np.argmax(fb.weights[:, bin_idx]))
        assert np.all(np.argmax(m.values, axis=0) == expected)

    def test_nonnegative_for_random_audio(self, small_params):
        rng = np.random.default_rng(3)
        w = dsp.Waveform(rng.uniform(-1, 1, 4000), 8000)
        assert np.all(dsp.mel_spectrogram(w, small_params).values >= 0)


class TestMelToLinear:
    def test_zero(self, small_params):
        m = dsp.MelSpectrogram(np.zeros((16, 4)), small_params)
        assert np.all(dsp.mel_to_linear(m) == 0)

    def test_shape(self, small_params):
        m = dsp.MelSpectrogram(np.ones((16, 4)), small_params)
        assert dsp.mel_to_linear(m).shape == (small_params.n_bins, 4)

    def test_pseudo_inverse_residual(self):
        # production-like band density; very coarse banks lose more
        rng = np.random.default_rng(1)
        p = dsp.SpectroParams(8000, 512, 256, 64)
        fb = dsp.build_mel_filterbank(p)
        s = rng.uniform(0.0, 1.0, (p.n_bins, 6))
        m = dsp.MelSpectrogram(fb.weights @ s, p)
        back = dsp.mel_to_linear(m)
        rel = np.linalg.norm(back - s) / np.linalg.norm(s)
        assert rel < 0.5  # lossy by design, but bounded


class TestGriffinLim:
    def test_zero_magnitude(self, small_params):
        out = dsp.griffin_lim(np.zeros((small_params.n_bins, 4)), small_params, iters=3)
        assert np.all(out.samples == 0)

    def test_zero_iters_is_seeded_istft(self, small_params):
        rng = np.random.default_rng(2)
        mag = rng.uniform(0, 1, (small_params.n_bins, 5))
        out = dsp.griffin_lim(mag, small_params, iters=0, seed=17)
        phase = np.random.default_rng(17).uniform(-np.pi, np.pi, mag.shape)
        ref = dsp.istft(mag * np.exp(1j * phase), small_params)
        np.testing.assert_array_equal(out.samples, ref.samples)

    def test_sine_recovery(self, small_params):
        w = sine_wave(440.0, 1.5, small_params.sample_rate)
        mag = np.abs(dsp.stft(w, small_params))
        out = dsp.griffin_lim(mag, small_params, iters=60, seed=0)
        spec = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spec) * small_params.sample_rate / len(out.samples)
        bin_width = small_params.sample_rate / small_params.stft_win_sz
        assert abs(peak_hz - 440.0) <= bin_width

    @pytest.mark.parametrize("seed", range(5))
    def test_error_non_increasing_random_magnitudes(self, small_params, seed):
        rng = np.random.default_rng(seed)
        mag = rng.uniform(0, 1, (small_params.n_bins, 6))
        _, errors = dsp.griffin_lim(mag, small_params, iters=20, seed=seed,
                                    return_errors=True)
        tol = 1e-9 * errors[0]
        assert all(errors[i + 1] <= errors[i] + tol for i in range(len(errors) - 1))

    def test_deterministic(self, small_params):
        rng = np.random.default_rng(9)
        mag = rng.uniform(0, 1, (small_params.n_bins, 5))
        a = dsp.griffin_lim(mag, small_params, iters=8, seed=4)
        b = dsp.griffin_lim(mag, small_params, iters=8, seed=4)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_negative_iters_rejected(self, small_params):
        with pytest.raises(ValueError):
            dsp.griffin_lim(np.zeros((small_params.n_bins, 2)), small_params, iters=-1)


class TestResample:
    def test_identity(self):
        w = sine_wave(100.0, 0.5, 8000)
        out = dsp.resample(w, 8000)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_halving_length(self):
        w = dsp.Waveform(np.zeros(44100 * 2), 44100)
        out = dsp.resample(w, 22050)
        assert abs(len(out.samples) - 44100) <= 1
        assert out.sample_rate == 22050

    def test_tone_preserved(self):
        w = sine_wave(1000.0, 1.0, 44100)
        out = dsp.resample(w, 22050)
        spec = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spec) * 22050 / len(out.samples)
        assert abs(peak_hz - 1000.0) <= 22050 / len(out.samples) + 1e-9

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            dsp.resample(sine_wave(100, 0.1, 8000), 0)


class TestParamsValidation:
    def test_hop_bounds(self):
        with pytest.raises(ConfigError):
            dsp.SpectroParams(8000, 512, 0, 16)
        with pytest.raises(ConfigError):
            dsp.SpectroParams(8000, 512, 1024, 16)

    def test_freq_range(self):
        with pytest.raises(ConfigError):
            dsp.SpectroParams(8000, 512, 128, 16, f_min=5000, f_max=4000)
        with pytest.raises(ConfigError):
            dsp.SpectroParams(8000, 512, 128, 16, f_max=9000)
