import numpy as np
import pytest

from phonsal.features import (
    FrameParams, MelSpectrogram, Waveform,
    cmvn, compute_logmel, hz_to_bin, hz_to_mel, mel_bin_centers, mel_to_hz, n_frames,
)


def tone(freq, duration=1.0, rate=16000, amplitude=1.0):
    t = np.arange(int(duration * rate)) / rate
    return Waveform(samples=amplitude * np.sin(2 * np.pi * freq * t), sample_rate=rate)


class TestFrameCount:
    def test_one_second_gives_98_frames(self):
        m = compute_logmel(tone(440.0))
        assert m.n_frames == 98  # 1 + (16000 - 400) / 160

    def test_formula_holds_for_random_lengths(self):
        rng = np.random.default_rng(1)
        p = FrameParams()
        for _ in range(50):
            n = int(rng.integers(400, 50000))
            w = Waveform(samples=rng.uniform(-0.5, 0.5, n), sample_rate=16000)
            assert compute_logmel(w, p).n_frames == 1 + (n - 400) // 160
            assert n_frames(n, p, 16000) == 1 + (n - 400) // 160

    def test_trailing_audio_below_one_hop_is_ignored(self):
        rng = np.random.default_rng(2)
        base = rng.uniform(-0.5, 0.5, 400 + 160 * 9)
        reference = compute_logmel(Waveform(samples=base, sample_rate=16000))
        for extra in (1, 80, 159):
            padded = np.concatenate([base, rng.uniform(-0.5, 0.5, extra)])
            m = compute_logmel(Waveform(samples=padded, sample_rate=16000))
            assert m.n_frames == reference.n_frames
            assert np.array_equal(m.values, reference.values)


class TestLogmelValues:
    def test_all_zero_waveform_hits_log_floor(self):
        w = Waveform(samples=np.zeros(16000), sample_rate=16000)
        m = compute_logmel(w)
        assert np.all(m.values == np.log(1e-10))

    def test_pure_tone_peaks_at_its_bin(self):
        w = tone(1000.0)
        m = compute_logmel(w)
        time_avg = m.values.mean(axis=0)
        assert int(np.argmax(time_avg)) == hz_to_bin(1000.0, m.frame_params, 16000)

    def test_tone_frequency_against_plain_dft(self):
        # independent check that the synthesized tone really is at 1 kHz
        w = tone(1000.0)
        spectrum = np.abs(np.fft.rfft(w.samples))
        freqs = np.fft.rfftfreq(len(w), 1.0 / 16000)
        assert abs(freqs[np.argmax(spectrum)] - 1000.0) < 2.0

    def test_cmvn_not_applied_initially(self):
        assert compute_logmel(tone(500.0)).cmvn_applied is False

    def test_rejects_short_input(self):
        with pytest.raises(ValueError, match="too-short"):
            compute_logmel(Waveform(samples=np.zeros(399), sample_rate=16000))

    def test_rejects_non_finite(self):
        bad = np.zeros(1000)
        bad[3] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            compute_logmel(Waveform(samples=bad, sample_rate=16000))

    def test_rejects_other_sample_rates(self):
        with pytest.raises(ValueError, match="16000"):
            compute_logmel(Waveform(samples=np.zeros(8000), sample_rate=8000))


class TestCmvn:
    def test_zero_mean_unit_or_zero_std(self):
        m = compute_logmel(tone(1000.0))
        out = cmvn(m)
        assert np.abs(out.values.mean(axis=0)).max() < 1e-9
        stds = out.values.std(axis=0)
        assert np.all((np.abs(stds - 1.0) < 1e-9) | (stds == 0.0))
        assert out.cmvn_applied is True

    def test_constant_channel_maps_to_zero(self):
        values = np.ones((5, 80)) * 3.7
        values[:, 10] = np.linspace(0, 1, 5)
        m = MelSpectrogram(values=values, frame_params=FrameParams(), sample_rate=16000)
        out = cmvn(m)
        assert np.all(out.values[:, 0] == 0.0)
        assert abs(out.values[:, 10].std() - 1.0) < 1e-12

    def test_two_frames_population_std(self):
        values = np.zeros((2, 80))
        values[0, :] = 1.0
        values[1, :] = 5.0
        out = cmvn(MelSpectrogram(values=values, frame_params=FrameParams(), sample_rate=16000))
        # population std of [1, 5] is 2, so the output is [-1, +1]
        assert np.allclose(out.values[0], -1.0)
        assert np.allclose(out.values[1], 1.0)

    def test_double_cmvn_is_an_error(self):
        out = cmvn(compute_logmel(tone(300.0)))
        with pytest.raises(ValueError, match="already"):
            cmvn(out)

    def test_single_frame_rejected(self):
        values = np.zeros((1, 80))
        m = MelSpectrogram(values=values, frame_params=FrameParams(), sample_rate=16000)
        with pytest.raises(ValueError, match="two frames"):
            cmvn(m)


class TestMelScale:
    def test_mel_of_zero(self):
        assert float(hz_to_mel(0.0)) == 0.0

    def test_mel_of_700(self):
        # 2595 * log10(2)
        assert float(hz_to_mel(700.0)) == pytest.approx(781.17, abs=0.01)

    def test_roundtrip(self):
        hz = np.linspace(0, 8000, 50)
        assert np.allclose(mel_to_hz(hz_to_mel(hz)), hz)

    def test_centers_strictly_increasing_within_range(self):
        p = FrameParams()
        centers = mel_bin_centers(p, 16000)
        assert centers.shape == (80,)
        assert np.all(np.diff(centers) > 0)
        assert centers[0] > 0
        assert centers[-1] < 8000


class TestHzToBin:
    def test_exact_center(self):
        p = FrameParams()
        centers = mel_bin_centers(p, 16000)
        assert hz_to_bin(float(centers[10]), p, 16000) == 10

    def test_boundaries(self):
        p = FrameParams()
        assert hz_to_bin(0.0, p, 16000) == 0
        assert hz_to_bin(8000.0, p, 16000) == 79

    def test_out_of_range(self):
        p = FrameParams()
        with pytest.raises(ValueError):
            hz_to_bin(-1.0, p, 16000)
        with pytest.raises(ValueError):
            hz_to_bin(8001.0, p, 16000)

    def test_monotone_non_decreasing(self):
        p = FrameParams()
        bins = [hz_to_bin(hz, p, 16000) for hz in np.linspace(0, 8000, 400)]
        assert all(b2 >= b1 for b1, b2 in zip(bins, bins[1:]))


class TestTypes:
    def test_waveform_validation(self):
        with pytest.raises(ValueError):
            Waveform(samples=np.array([]), sample_rate=16000)
        with pytest.raises(ValueError):
            Waveform(samples=np.zeros(10), sample_rate=0)

    def test_frame_params_validation(self):
        with pytest.raises(ValueError):
            FrameParams(window_ms=10, hop_ms=25)
        with pytest.raises(ValueError):
            FrameParams(n_mels=0)

    def test_mel_shape_validation(self):
        with pytest.raises(ValueError):
            MelSpectrogram(values=np.zeros((4, 10)), frame_params=FrameParams(), sample_rate=16000)
        with pytest.raises(ValueError, match="at least one frame"):
            MelSpectrogram(values=np.zeros((0, 80)), frame_params=FrameParams(), sample_rate=16000)

    def test_frame_time(self):
        m = compute_logmel(tone(500.0, duration=0.1))
        assert m.frame_time(0) == pytest.approx(0.0125)
        assert m.frame_time(3) == pytest.approx(0.0425)
