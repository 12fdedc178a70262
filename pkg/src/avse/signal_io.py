"""Time-domain audio I/O, framing, STFT/ISTFT and spectrogram emission.

The analysis chain follows the usual speech front end: 16 ms Hamming-windowed
frames with a 10 ms hop, zero-padded to a 2048-point transform (1025 one-sided
bins at the default 50 kHz rate).  Synthesis uses weighted overlap-add with
window-squared normalization, which reconstructs the interior of the signal
exactly for any hop.
"""

import io
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    MalformedWavError,
    MultichannelWavError,
    UnsupportedWavCodecError,
)
from .ioutil import atomic_write_bytes

# Default analysis parameters, expressed as durations so any sample rate works.
DEFAULT_FRAME_MS = 16.0
DEFAULT_HOP_MS = 10.0
DEFAULT_FFT_LEN = 2048

# Normalization floor for the overlap-add window-power sum.
_OLA_FLOOR = 1e-12


@dataclass
class AudioSignal:
    """Mono sample sequence with its sample rate.

    Samples are dimensionless amplitudes, nominally in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not (isinstance(self.sample_rate, (int, np.integer)) and self.sample_rate > 0):
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        self.sample_rate = int(self.sample_rate)
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN/Inf")

    def __len__(self):
        return self.samples.size


@dataclass
class StftConfig:
    """Framing/windowing parameters for the STFT."""

    frame_len: int
    hop: int
    fft_len: int
    window: np.ndarray

    def __post_init__(self):
        self.window = np.asarray(self.window, dtype=np.float64)
        if not (0 < self.hop <= self.frame_len <= self.fft_len):
            raise ValueError(
                f"need 0 < hop <= frame_len <= fft_len, got "
                f"hop={self.hop} frame_len={self.frame_len} fft_len={self.fft_len}"
            )
        if self.window.shape != (self.frame_len,):
            raise ValueError("window length must equal frame_len")
        if np.any(self.window <= 0.0) or np.any(self.window > 1.0):
            raise ValueError("window values must lie in (0, 1]")

    @property
    def n_bins(self):
        return self.fft_len // 2 + 1


@dataclass
class ComplexSpectra:
    """Per-frame one-sided complex DFT coefficients."""

    frames: np.ndarray  # (T, fft_len // 2 + 1) complex
    config: StftConfig
    sample_rate: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.config.n_bins:
            raise ValueError(
                f"frames must be (T, {self.config.n_bins}), got {self.frames.shape}"
            )
        if self.frames.size and not np.all(np.isfinite(self.frames)):
            raise ValueError("spectra contain NaN/Inf")

    @property
    def n_frames(self):
        return self.frames.shape[0]


def hamming_window(n: int) -> np.ndarray:
    """Symmetric Hamming window: w[i] = 0.54 - 0.46*cos(2*pi*i/(n-1))."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    i = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * i / (n - 1))


def make_stft_config(
    sample_rate: int,
    frame_ms: float = DEFAULT_FRAME_MS,
    hop_ms: float = DEFAULT_HOP_MS,
    fft_len: int = DEFAULT_FFT_LEN,
) -> StftConfig:
    """Build a Hamming-window StftConfig from durations (16 ms / 10 ms defaults)."""
    frame_len = int(round(sample_rate * frame_ms / 1000.0))
    hop = int(round(sample_rate * hop_ms / 1000.0))
    return StftConfig(frame_len=frame_len, hop=hop, fft_len=fft_len,
                      window=hamming_window(frame_len))


def read_wav(path) -> AudioSignal:
    """Read a mono RIFF/WAVE file (16-bit PCM or 32-bit IEEE float).

    16-bit samples are normalized by 32768.  Raises distinct errors for a
    malformed container, multichannel data, and unsupported codecs.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt_chunk = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{path}: truncated '{cid.decode(errors='replace')}' chunk")
        if cid == b"fmt ":
            fmt_chunk = body
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt_chunk is None or payload is None:
        raise MalformedWavError(f"{path}: missing fmt/data chunk")
    if len(fmt_chunk) < 16:
        raise MalformedWavError(f"{path}: fmt chunk too short")

    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt_chunk)
    if channels != 1:
        raise MultichannelWavError(f"{path}: {channels} channels; multichannel unsupported")

    if audio_format == 1 and bits == 16:
        if len(payload) % 2:
            raise MalformedWavError(f"{path}: data chunk not a whole number of samples")
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        if len(payload) % 4:
            raise MalformedWavError(f"{path}: data chunk not a whole number of samples")
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedWavCodecError(
            f"{path}: unsupported codec (format tag {audio_format}, {bits}-bit)"
        )
    return AudioSignal(samples, int(sample_rate))


def write_wav(signal: AudioSignal, path) -> None:
    """Write 16-bit PCM.  Values are clipped to [-1, 1 - 2**-15] first."""
    clipped = np.clip(signal.samples, -1.0, 1.0 - 2.0 ** -15)
    pcm = np.round(clipped * 32768.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(signal.sample_rate)
        wf.writeframes(pcm.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def stft(signal: AudioSignal, config: StftConfig) -> ComplexSpectra:
    """Windowed short-time transform; frame t covers [t*hop, t*hop + frame_len)."""
    n = len(signal)
    if n < config.frame_len:
        raise ValueError(
            f"signal of {n} samples is shorter than one frame ({config.frame_len})"
        )
    n_frames = (n - config.frame_len) // config.hop + 1
    frames = np.empty((n_frames, config.n_bins), dtype=np.complex128)
    for t in range(n_frames):
        start = t * config.hop
        chunk = signal.samples[start : start + config.frame_len] * config.window
        frames[t] = np.fft.rfft(chunk, n=config.fft_len)
    return ComplexSpectra(frames, config, signal.sample_rate)


def istft(spectra: ComplexSpectra) -> AudioSignal:
    """Weighted overlap-add synthesis.

    Each inverse-transformed frame is windowed a second time, accumulated at
    its hop position, and the result is divided by the accumulated squared
    window (floored at 1e-12).  Interior samples of an unmodified transform
    are reconstructed exactly.
    """
    cfg = spectra.config
    if spectra.n_frames == 0:
        raise ValueError("cannot synthesize from empty spectra")
    out_len = (spectra.n_frames - 1) * cfg.hop + cfg.frame_len
    acc = np.zeros(out_len)
    wsum = np.zeros(out_len)
    wsq = cfg.window * cfg.window
    for t in range(spectra.n_frames):
        frame = np.fft.irfft(spectra.frames[t], n=cfg.fft_len)[: cfg.frame_len]
        start = t * cfg.hop
        acc[start : start + cfg.frame_len] += frame * cfg.window
        wsum[start : start + cfg.frame_len] += wsq
    samples = acc / np.maximum(wsum, _OLA_FLOOR)
    return AudioSignal(samples, spectra.sample_rate)


def power_spectrum(spectra: ComplexSpectra) -> np.ndarray:
    """Per-frame squared magnitudes, shape (T, fft_len/2 + 1)."""
    return np.abs(spectra.frames) ** 2


def emit_spectrogram(spectra: ComplexSpectra, path, format: str = "pgm") -> None:
    """Write a dB-magnitude spectrogram.

    pgm: binary P5, one column per frame, low frequency at the bottom,
    intensities mapping [max - 80 dB, max] linearly onto [0, 255].
    csv: one frame per row, dB values floored at max - 80.
    """
    if spectra.n_frames == 0:
        raise ValueError("cannot render empty spectra")
    mag = np.abs(spectra.frames)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    finite = db[np.isfinite(db)]
    top = float(finite.max()) if finite.size else 0.0
    lo = top - 80.0

    if format == "pgm":
        scaled = np.clip((db - lo) / 80.0, 0.0, 1.0)  # -inf clips to 0
        img = np.round(scaled * 255.0).astype(np.uint8)
        # rows top-to-bottom = bins high-to-low
        img = img.T[::-1]
        header = f"P5\n{spectra.n_frames} {img.shape[0]}\n255\n".encode("ascii")
        atomic_write_bytes(path, header + img.tobytes())
    elif format == "csv":
        floored = np.maximum(db, lo)
        lines = [",".join(f"{v:.6f}" for v in row) for row in floored]
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
    else:
        raise ValueError(f"unknown spectrogram format {format!r}")
