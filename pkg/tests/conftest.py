"""Shared fixtures and independent signal-analysis oracles.

The oracles here (autocorrelation pitch tracking, spectral-flux attack
counting, windowed RMS) deliberately avoid the package's own DSP path so
they can serve as independent checks of the synthesizer's contracts.
"""

import numpy as np
import pytest

from gztech import data
from gztech.dsp import SAMPLE_RATE


def track_f0(segment: np.ndarray, sr: int = SAMPLE_RATE) -> float:
    """Fundamental frequency by autocorrelation peak over 50-1500 Hz lags."""
    seg = segment - segment.mean()
    ac = np.correlate(seg, seg, "full")[len(seg) - 1 :]
    lo, hi = int(sr / 1500), int(sr / 50)
    lag = lo + int(np.argmax(ac[lo:hi]))
    return sr / lag


def count_attacks(samples: np.ndarray, sr: int = SAMPLE_RATE, hop: int = 512,
                  rel_thresh: float = 0.25) -> int:
    """Count onset-like peaks in the positive spectral flux."""
    n_fft = 1024
    padded = np.pad(samples, n_fft // 2, mode="constant")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop]
    mags = np.abs(np.fft.rfft(frames * np.hanning(n_fft), axis=1))
    flux = np.maximum(mags[1:] - mags[:-1], 0).sum(axis=1)
    flux = np.concatenate([[0.0], flux, [0.0]])
    thresh = rel_thresh * flux.max()
    min_gap = int(0.03 * sr / hop)
    count, last = 0, -(min_gap + 1)
    for i in range(1, len(flux) - 1):
        if (flux[i] >= thresh and flux[i] >= flux[i - 1]
                and flux[i] >= flux[i + 1] and i - last > min_gap):
            count += 1
            last = i
    return count


def rms_envelope(samples: np.ndarray, window: int = 2205) -> np.ndarray:
    """Non-overlapping windowed RMS."""
    n = samples.size // window
    return np.sqrt(np.mean(samples[: n * window].reshape(n, window) ** 2, axis=1))


def make_clip_pool(seed_stream, per_class: int,
                   f0_range=(110.0, 660.0), duration_range=(0.5, 1.2)):
    rng = np.random.default_rng(seed_stream)
    pool = []
    for tech in data.TechniqueClass:
        for _ in range(per_class):
            f0 = rng.uniform(*f0_range)
            dur = rng.uniform(*duration_range)
            pool.append(data.synth_clip(tech, f0, dur, rng))
    return pool


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small train/test sequence sets shared by the cheaper tests."""
    train_pool = make_clip_pool([303, 1], 4)
    test_pool = make_clip_pool([303, 2], 2)
    train = data.generate_split(train_pool, 8, "train", np.random.default_rng([303, 3]))
    test = data.generate_split(test_pool, 3, "test", np.random.default_rng([303, 4]))
    return train, test
