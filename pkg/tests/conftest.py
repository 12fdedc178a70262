"""Shared fixtures: deterministic speech-like signals and stationary noise.

The speech-like generator produces alternating voiced (harmonic stack) and
unvoiced (shaped noise) segments after 150 ms of leading silence, so the
baselines' initial noise estimate sees noise-only frames in any mixture.
"""

import numpy as np
import pytest

from avse.signal_io import AudioSignal


def _speech_like(duration_s=1.2, sample_rate=16000, seed=0, rms=0.1):
    rng = np.random.default_rng(seed)
    n = int(duration_s * sample_rate)
    x = np.zeros(n)
    pos = int(0.15 * sample_rate)  # leading silence
    while pos < n:
        seg_len = int(rng.integers(int(0.08 * sample_rate), int(0.25 * sample_rate)))
        end = min(pos + seg_len, n)
        m = end - pos
        if m <= 1:
            break
        env = np.sin(np.linspace(0.0, np.pi, m)) ** 2
        if rng.random() < 0.75:
            f0 = rng.uniform(90.0, 220.0)
            t = np.arange(m) / sample_rate
            seg = np.zeros(m)
            for h in range(1, 9):
                seg += (rng.uniform(0.5, 1.0) / h) * np.sin(
                    2.0 * np.pi * f0 * h * t + rng.uniform(0.0, 2.0 * np.pi)
                )
        else:
            seg = rng.normal(0.0, 0.5, m)
        x[pos:end] += seg * env
        pos = end + int(rng.integers(0, int(0.05 * sample_rate)))
    x *= rms / max(np.sqrt(np.mean(x**2)), 1e-12)
    return AudioSignal(x, sample_rate)


def _white_noise(n_samples, sample_rate=16000, seed=1, rms=0.1):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, n_samples)
    x *= rms / np.sqrt(np.mean(x**2))
    return AudioSignal(x, sample_rate)


@pytest.fixture
def make_speech():
    return _speech_like


@pytest.fixture
def make_noise():
    return _white_noise
