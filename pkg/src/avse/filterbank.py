"""Mel filterbank construction, log-FB feature extraction, and the inverse
filterbank lift.

The filterbank is the usual bank of triangular weights placed at equal mel
spacing; its least-squares pseudo-inverse maps M-channel filterbank energies
back to the K-bin power spectrum, which is what lets a low-dimensional
feature estimate drive a full-resolution Wiener filter.
"""

import enum
from dataclasses import dataclass

import numpy as np

# Floor applied to linear filterbank energies and lifted power values.
EPS_POWER = 1e-10

# Tolerance used when validating that alpha is a true left inverse of phi.
_PINV_TOL = 1e-10


class FeatureKind(enum.IntEnum):
    """Feature-vector kinds; integer values are the AVF1 on-disk codes."""

    LOG_FB_AUDIO = 0
    LINEAR_FB_AUDIO = 1
    VISUAL = 2


@dataclass
class FeatureSequence:
    """M-dimensional per-frame feature vectors with a kind tag."""

    vectors: np.ndarray  # (T, M)
    kind: FeatureKind
    frame_rate: float = 100.0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.kind = FeatureKind(self.kind)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be (T, M), got shape {self.vectors.shape}")
        if self.vectors.shape[1] < 1:
            raise ValueError("feature dimension must be positive")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            raise ValueError("feature vectors contain NaN/Inf")
        if self.kind is FeatureKind.LINEAR_FB_AUDIO and self.vectors.size:
            if self.vectors.min() < 0.0:
                raise ValueError("linear filterbank features must be nonnegative")

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def n_frames(self):
        return self.vectors.shape[0]


@dataclass
class MelFilterbank:
    """Triangular filter matrix phi (K x M), boundary bins, and pseudo-inverse."""

    phi: np.ndarray         # (K, M), columns are the triangular filters
    boundaries: np.ndarray  # (M + 2,) bin indices
    alpha: np.ndarray       # (M, K), left inverse of phi
    sample_rate: int
    fft_len: int

    def __post_init__(self):
        k, m = self.phi.shape
        if k != self.fft_len // 2 + 1:
            raise ValueError("phi row count must equal fft_len/2 + 1")
        if self.alpha.shape != (m, k):
            raise ValueError("alpha must be the transpose shape of phi")
        if self.boundaries.shape != (m + 2,):
            raise ValueError("need M + 2 boundary bins")
        if np.any(np.diff(self.boundaries) <= 0):
            raise ValueError("boundary bins must be strictly increasing")
        resid = self.alpha @ self.phi - np.eye(m)
        if np.max(np.abs(resid)) > _PINV_TOL:
            raise ValueError("alpha is not a left inverse of phi to tolerance")

    @property
    def n_channels(self):
        return self.phi.shape[1]

    @property
    def n_bins(self):
        return self.phi.shape[0]


def hz_to_mel(f: float) -> float:
    """Map Hz to mel: 2595 * log10(1 + f/700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(m: float) -> float:
    """Inverse of hz_to_mel: 700 * (10**(m/2595) - 1)."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be nonnegative")
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def _solve_normal_equations(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve gram @ x = rhs by Gaussian elimination with partial pivoting.

    The gram matrix here is M x M (M ~ 23), so a direct dense solve is fine.
    Pivots below 1e-12 are treated as singular.
    """
    a = gram.astype(np.float64).copy()
    b = rhs.astype(np.float64).copy()
    n = a.shape[0]
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot_row, col]) < 1e-12:
            raise ValueError(f"filterbank gram matrix is singular at column {col}")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :] -= factors[:, None] * a[col]
        b[col + 1 :] -= factors[:, None] * b[col]
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def build_filterbank(
    channels: int,
    fft_len: int,
    sample_rate: int,
    f_low: float = 0.0,
    f_high: float | None = None,
) -> MelFilterbank:
    """Build an M-channel triangular mel filterbank and its pseudo-inverse.

    Centre frequencies are equally spaced on the mel scale between f_low and
    f_high; boundary bins are round(fft_len/sample_rate * f_c) (half-up).
    Each filter rises linearly to 1 at its centre bin and falls to 0 at the
    next boundary.
    """
    if f_high is None:
        f_high = sample_rate / 2.0
    if channels < 2:
        raise ValueError("need at least 2 channels")
    if not (0 <= f_low < f_high <= sample_rate / 2.0):
        raise ValueError(f"need 0 <= f_low < f_high <= Nyquist, got [{f_low}, {f_high}]")

    mel_edges = np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), channels + 2)
    centres_hz = mel_to_hz(mel_edges)
    boundaries = np.floor((fft_len / sample_rate) * centres_hz + 0.5).astype(np.int64)

    diffs = np.diff(boundaries)
    bad = np.nonzero(diffs <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"degenerate filterbank: channel {min(i + 1, channels)} has a zero-width "
            f"edge (boundary bins {boundaries[i]} and {boundaries[i + 1]})"
        )

    n_bins = fft_len // 2 + 1
    phi = np.zeros((n_bins, channels))
    k = np.arange(n_bins, dtype=np.float64)
    for m in range(channels):
        left, centre, right = boundaries[m], boundaries[m + 1], boundaries[m + 2]
        rising = (k >= left) & (k <= centre)
        falling = (k >= centre) & (k <= right)
        phi[rising, m] = (k[rising] - left) / (centre - left)
        phi[falling, m] = (right - k[falling]) / (right - centre)

    alpha = _solve_normal_equations(phi.T @ phi, phi.T)
    return MelFilterbank(phi=phi, boundaries=boundaries, alpha=alpha,
                         sample_rate=sample_rate, fft_len=fft_len)


def apply_logfb(power_frames: np.ndarray, fb: MelFilterbank,
                frame_rate: float = 100.0) -> FeatureSequence:
    """Project power frames onto the filterbank and log-compress.

    Linear energies are floored at 1e-10 before the log.
    """
    power_frames = np.asarray(power_frames, dtype=np.float64)
    if power_frames.ndim != 2 or power_frames.shape[1] != fb.n_bins:
        raise ValueError(
            f"power frames must be (T, {fb.n_bins}), got {power_frames.shape}"
        )
    linear = power_frames @ fb.phi
    logfb = np.log(np.maximum(linear, EPS_POWER))
    return FeatureSequence(logfb, FeatureKind.LOG_FB_AUDIO, frame_rate)


def lift(features: FeatureSequence, fb: MelFilterbank, floor: bool = True) -> np.ndarray:
    """Map M-channel features back to a (T, K) power spectrum via alpha.

    Log features are exponentiated first.  The pseudo-inverse can produce
    negative power values; these are floored at 1e-10 unless floor=False
    (useful for verifying the exact round-trip identity).
    """
    if features.kind not in (FeatureKind.LOG_FB_AUDIO, FeatureKind.LINEAR_FB_AUDIO):
        raise ValueError(f"cannot lift features of kind {features.kind.name}")
    if features.dim != fb.n_channels:
        raise ValueError(
            f"feature dim {features.dim} does not match filterbank channels {fb.n_channels}"
        )
    vec = features.vectors
    if features.kind is FeatureKind.LOG_FB_AUDIO:
        vec = np.exp(vec)
    lifted = vec @ fb.alpha
    if floor:
        lifted = np.maximum(lifted, EPS_POWER)
    return lifted
