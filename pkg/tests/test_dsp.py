import numpy as np
import pytest

from gztech import dsp
from gztech.errors import ValidationError


def test_mel_config_rejects_wrong_grid():
    with pytest.raises(ValidationError):
        dsp.MelConfig(n_fft=1024)
    with pytest.raises(ValidationError):
        dsp.MelConfig(hop=2048)
    with pytest.raises(ValidationError):
        dsp.MelConfig(n_mels=64)


def test_audio_buffer_validation():
    with pytest.raises(ValidationError):
        dsp.AudioBuffer(np.zeros(100), sample_rate=48000)
    with pytest.raises(ValidationError):
        dsp.AudioBuffer(np.array([0.0, np.nan]))
    with pytest.raises(ValidationError):
        dsp.AudioBuffer(np.zeros((2, 100)))


class TestStft:
    def test_zero_second_of_silence(self):
        spec = dsp.stft(dsp.AudioBuffer(np.zeros(44100)))
        assert spec.shape == (1025, 20)
        assert np.abs(spec).max() == 0.0

    def test_pure_sine_peaks_at_expected_bin(self):
        # 1 kHz -> bin 1000 * 2048 / 44100 ~ 46.4, nearest bin 46
        t = np.arange(2 * 44100) / 44100
        spec = np.abs(dsp.stft(dsp.AudioBuffer(np.sin(2 * np.pi * 1000.0 * t))))
        interior = spec[:, 2:-2]
        assert np.all(interior.argmax(axis=0) == 46)

    def test_parseval_energy_per_frame(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.5, 0.5, 44100)
        spec = dsp.stft(dsp.AudioBuffer(x))
        power = np.abs(spec) ** 2
        # rfft halves the spectrum; double the shared bins
        spectral = (power[0] + 2 * power[1:-1].sum(axis=0) + power[-1]) / 2048
        padded = np.pad(x, 1024, mode="reflect")
        window = np.hanning(2048)
        direct = np.array([
            np.sum((padded[k * 2205 : k * 2205 + 2048] * window) ** 2)
            for k in range(20)
        ])
        np.testing.assert_allclose(spectral, direct, rtol=1e-12)

    def test_empty_and_short_audio_rejected(self):
        with pytest.raises(ValidationError):
            dsp.stft(dsp.AudioBuffer(np.zeros(0)))
        with pytest.raises(ValidationError):
            dsp.stft(dsp.AudioBuffer(np.zeros(2000)))


class TestMelFilterbank:
    def test_shape(self):
        assert dsp.mel_filterbank().shape == (128, 1025)

    def test_rows_are_unimodal_triangles(self):
        fb = dsp.mel_filterbank()
        assert (fb >= 0).all()
        for row in fb:
            peak = int(row.argmax())
            assert row[peak] > 0  # every filter catches at least one bin
            assert np.all(np.diff(row[: peak + 1]) >= -1e-15)
            assert np.all(np.diff(row[peak:]) <= 1e-15)

    def test_centers_follow_mel_spacing(self):
        centers = dsp.filter_centers()
        gaps = np.diff(centers)
        assert np.all(gaps > 0)
        assert np.all(np.diff(gaps) > -1e-9)  # spacing grows with frequency
        # independent mel-scale oracle: centers equal the mel-space grid
        grid = np.linspace(dsp.hz_to_mel(0.0), dsp.hz_to_mel(22050.0), 130)[1:-1]
        np.testing.assert_allclose(dsp.hz_to_mel(centers), grid, rtol=1e-12)


class TestLogMel:
    def test_128_second_training_length_gives_256_frames(self):
        spec = dsp.log_mel(dsp.AudioBuffer(np.zeros(564480)))
        assert spec.n_frames == 256
        assert spec.values.shape == (128, 256)

    def test_silence_clamps_to_log_floor(self):
        cfg = dsp.MelConfig()
        spec = dsp.log_mel(dsp.AudioBuffer(np.zeros(44100)), cfg)
        assert np.all(spec.values == np.log(cfg.log_floor))

    def test_frame_duration_is_exactly_one_twentieth_second(self):
        spec = dsp.log_mel(dsp.AudioBuffer(np.zeros(44100)))
        assert spec.frame_duration == 2205 / 44100 == 0.05

    def test_amplitude_scaling_never_decreases_cells(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.3, 0.3, 3 * 44100)
        lo = dsp.log_mel(dsp.AudioBuffer(x)).values
        hi = dsp.log_mel(dsp.AudioBuffer(2.5 * x)).values
        assert np.all(hi >= lo)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-0.5, 0.5, 44100)
        a = dsp.log_mel(dsp.AudioBuffer(x)).values
        b = dsp.log_mel(dsp.AudioBuffer(x.copy())).values
        assert np.array_equal(a, b)

    def test_values_finite_and_floored(self):
        rng = np.random.default_rng(3)
        cfg = dsp.MelConfig()
        spec = dsp.log_mel(dsp.AudioBuffer(rng.uniform(-1, 1, 66150)), cfg)
        assert np.all(np.isfinite(spec.values))
        assert np.all(spec.values >= np.log(cfg.log_floor))


class TestWavIO:
    def test_float32_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        x = rng.uniform(-0.9, 0.9, 5000).astype(np.float32).astype(np.float64)
        path = tmp_path / "f32.wav"
        dsp.write_wav(path, dsp.AudioBuffer(x))
        back = dsp.read_wav(path)
        assert np.array_equal(back.samples, x)

    def test_pcm16_read(self, tmp_path):
        from scipy.io import wavfile

        xi = (np.sin(np.linspace(0, 20, 4000)) * 20000).astype(np.int16)
        path = tmp_path / "pcm.wav"
        wavfile.write(path, 44100, xi)
        back = dsp.read_wav(path)
        np.testing.assert_allclose(back.samples, xi / 32768.0, atol=1e-12)

    def test_stereo_downmixed_by_averaging(self, tmp_path):
        from scipy.io import wavfile

        left = np.linspace(-0.5, 0.5, 3000).astype(np.float32)
        right = -left
        path = tmp_path / "st.wav"
        wavfile.write(path, 44100, np.stack([left, right], axis=1))
        back = dsp.read_wav(path)
        np.testing.assert_allclose(back.samples, 0.0, atol=1e-7)

    def test_wrong_sample_rate_rejected(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "sr.wav"
        wavfile.write(path, 22050, np.zeros(1000, dtype=np.float32))
        with pytest.raises(ValidationError):
            dsp.read_wav(path)
