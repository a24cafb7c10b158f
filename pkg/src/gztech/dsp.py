"""Audio front end: WAV loading and the log-mel spectrogram.

All analysis runs on a fixed grid: 44.1 kHz input, FFT window of 2048,
hop of 2205 samples, 128 mel bins. One hop is exactly 0.05 s, so feature
frame k and label frame k always cover the same time interval.

Everything here is computed in float64 and is a pure function of its
inputs; callers cast to float32 at the model boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .errors import ValidationError

SAMPLE_RATE = 44100


@dataclass(frozen=True)
class MelConfig:
    """Front-end parameters. The defaults are the only values that validate."""

    n_fft: int = 2048
    hop: int = 2205
    n_mels: int = 128
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_fft != 2048:
            raise ValidationError(f"n_fft must be 2048, got {self.n_fft}")
        if self.hop != 2205:
            raise ValidationError(f"hop must be 2205 (0.05 s at 44.1 kHz), got {self.hop}")
        if self.n_mels != 128:
            raise ValidationError(f"n_mels must be 128, got {self.n_mels}")
        if not 0 < self.log_floor < 1:
            raise ValidationError(f"log_floor must be in (0, 1), got {self.log_floor}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frame_duration(self) -> float:
        return self.hop / SAMPLE_RATE


@dataclass
class AudioBuffer:
    """Mono PCM at 44.1 kHz, amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValidationError(f"expected mono audio, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValidationError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}; "
                "resampling is not performed"
            )
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValidationError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """Log-power mel matrix [n_mels x n_frames]; each frame spans 0.05 s."""

    values: np.ndarray
    frame_duration: float = 0.05

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def stft(audio: AudioBuffer, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Complex spectral frames, shape [n_fft/2+1, n_frames].

    Frame t is a Hann-windowed slice centered at sample t*hop; the signal is
    reflection-padded at both ends. n_frames = floor(len(samples)/hop), so
    12.8 s of audio yields exactly 256 frames.
    """
    x = audio.samples
    if x.size == 0:
        raise ValidationError("cannot compute STFT of empty audio")
    if x.size < cfg.hop:
        raise ValidationError(
            f"audio too short: {x.size} samples < one hop ({cfg.hop})"
        )
    n_frames = x.size // cfg.hop
    pad = cfg.n_fft // 2
    padded = np.pad(x, pad, mode="reflect")
    frames = sliding_window_view(padded, cfg.n_fft)[:: cfg.hop][:n_frames]
    window = np.hanning(cfg.n_fft)  # symmetric taper
    return np.fft.rfft(frames * window, axis=1).T


def mel_filterbank(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular mel filters, shape [n_mels x n_fft/2+1].

    128 filters with centers equally spaced on the HTK mel scale between
    0 Hz and 22050 Hz. Weights are the raw (unnormalized) triangles so the
    matrix is reproducible bit-for-bit from these constants alone.
    """
    nyquist = SAMPLE_RATE / 2.0
    fft_freqs = np.linspace(0.0, nyquist, cfg.n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, cfg.n_bins))
    for i in range(cfg.n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def filter_centers(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    nyquist = SAMPLE_RATE / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), cfg.n_mels + 2))
    return edges[1:-1]


def log_mel(audio: AudioBuffer, cfg: MelConfig = MelConfig()) -> Spectrogram:
    """Log-power mel spectrogram: log(max(filterbank @ |STFT|^2, log_floor))."""
    spec = stft(audio, cfg)
    power = spec.real**2 + spec.imag**2
    mel = mel_filterbank(cfg) @ power
    values = np.log(np.maximum(mel, cfg.log_floor))
    return Spectrogram(values=values, frame_duration=cfg.frame_duration)


def read_wav(path) -> AudioBuffer:
    """Read a RIFF WAV (PCM 16-bit or 32-bit float), downmixing to mono.

    Multi-channel input is averaged across channels. Sample rates other
    than 44100 Hz are rejected; resampling is out of scope.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ValidationError(f"unsupported WAV file {path}: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise ValidationError(
            f"{path}: sample rate {rate} Hz is not supported (need {SAMPLE_RATE})"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValidationError(
            f"{path}: unsupported sample format {data.dtype}; "
            "expected 16-bit PCM or 32-bit float"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate=SAMPLE_RATE)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write mono float32 WAV."""
    wavfile.write(path, audio.sample_rate, audio.samples.astype(np.float32))
