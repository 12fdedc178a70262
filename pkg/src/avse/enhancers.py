"""Speech enhancers: the filterbank-driven Wiener filter and two classical
baselines (power spectral subtraction and the log-MMSE amplitude estimator).

All three manipulate only the magnitude spectrum; the noisy phase is reused
for synthesis.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .filterbank import EPS_POWER, FeatureKind, FeatureSequence, MelFilterbank
from .signal_io import AudioSignal, ComplexSpectra, StftConfig, istft, power_spectrum, stft

log = logging.getLogger(__name__)

_EULER_GAMMA = 0.5772156649015329


@dataclass
class EvwfConfig:
    """Wiener-gain clamping parameters."""

    gain_floor: float = 0.0
    feature_floor: float = EPS_POWER

    def __post_init__(self):
        if not (0.0 <= self.gain_floor < 1.0):
            raise ValueError("gain_floor must lie in [0, 1)")
        if self.feature_floor <= 0.0:
            raise ValueError("feature_floor must be positive")


@dataclass
class SsConfig:
    """Spectral-subtraction parameters (oversubtraction and spectral floor)."""

    init_frames: int = 6
    oversub: float = 1.0
    floor: float = 0.002

    def __post_init__(self):
        if self.init_frames < 1:
            raise ValueError("init_frames must be >= 1")
        if self.oversub < 1.0:
            raise ValueError("oversubtraction factor must be >= 1")
        if not (0.0 < self.floor < 1.0):
            raise ValueError("spectral floor must lie in (0, 1)")


@dataclass
class LmmseConfig:
    """Log-MMSE parameters (decision-directed smoothing and a-priori floor)."""

    init_frames: int = 6
    dd_alpha: float = 0.98
    xi_min: float = 10.0 ** (-25.0 / 10.0)

    def __post_init__(self):
        if self.init_frames < 1:
            raise ValueError("init_frames must be >= 1")
        if not (0.0 < self.dd_alpha < 1.0):
            raise ValueError("dd_alpha must lie in (0, 1)")
        if self.xi_min <= 0.0:
            raise ValueError("xi_min must be positive")


def evwf_gain(clean_fb_linear: np.ndarray, noisy_fb_linear: np.ndarray,
              cfg: EvwfConfig | None = None) -> np.ndarray:
    """Filterbank-domain Wiener gain: estimated clean power over noisy power.

    The denominator is the filterbank power of the actual noisy signal (it
    stands in for clean + noise), so equal clean and noise energies give a
    gain of exactly 0.5.  Gains are clamped into [gain_floor, 1].
    """
    cfg = cfg or EvwfConfig()
    clean_fb_linear = np.asarray(clean_fb_linear, dtype=np.float64)
    noisy_fb_linear = np.asarray(noisy_fb_linear, dtype=np.float64)
    if clean_fb_linear.shape != noisy_fb_linear.shape:
        raise ValueError(
            f"shape mismatch: {clean_fb_linear.shape} vs {noisy_fb_linear.shape}"
        )
    gains = clean_fb_linear / noisy_fb_linear
    return np.clip(gains, cfg.gain_floor, 1.0)


def evwf_spectral_gains(estimated_logfb: FeatureSequence, noisy_power: np.ndarray,
                        fb: MelFilterbank, cfg: EvwfConfig | None = None) -> np.ndarray:
    """Full-resolution (T, K) Wiener gains from filterbank-domain estimates.

    Both the clean estimate and the noisy filterbank power are lifted to K
    bins through the filterbank pseudo-inverse and the quotient is clamped
    into [gain_floor, 1]; clamping absorbs the over/undershoot the lift's
    negative pseudo-inverse entries can produce.
    """
    cfg = cfg or EvwfConfig()
    noisy_fb = np.maximum(noisy_power @ fb.phi, cfg.feature_floor)
    est = estimated_logfb.vectors
    if estimated_logfb.kind is FeatureKind.LOG_FB_AUDIO:
        est = np.exp(est)
    elif estimated_logfb.kind is not FeatureKind.LINEAR_FB_AUDIO:
        raise ValueError(f"cannot use features of kind {estimated_logfb.kind.name}")
    if est.shape != noisy_fb.shape:
        raise ValueError(f"feature shape {est.shape} != filterbank power shape {noisy_fb.shape}")
    est = np.maximum(est, cfg.feature_floor)

    # same mapping as filterbank.lift, applied to numerator and denominator
    lifted_clean = np.maximum(est @ fb.alpha, EPS_POWER)
    lifted_noisy = np.maximum(noisy_fb @ fb.alpha, EPS_POWER)
    return np.clip(lifted_clean / lifted_noisy, cfg.gain_floor, 1.0)


def apply_spectral_gains(spectra: ComplexSpectra, gains: np.ndarray) -> ComplexSpectra:
    """Scale per-frame magnitudes by gains, keeping the noisy phase."""
    if gains.shape != spectra.frames.shape:
        raise ValueError(f"gain shape {gains.shape} != spectra shape {spectra.frames.shape}")
    return ComplexSpectra(spectra.frames * gains, spectra.config, spectra.sample_rate)


def evwf_enhance(noisy: AudioSignal, estimated_logfb: FeatureSequence,
                 fb: MelFilterbank, stft_cfg: StftConfig,
                 cfg: EvwfConfig | None = None) -> AudioSignal:
    """Enhance a noisy signal using estimated clean filterbank features.

    An off-by-one between the feature frame count and the STFT frame count
    (differing framing conventions upstream) is tolerated by truncating to
    the shorter sequence; larger mismatches are an error.
    """
    cfg = cfg or EvwfConfig()
    if fb.fft_len != stft_cfg.fft_len:
        raise ValueError(
            f"filterbank fft_len {fb.fft_len} != stft fft_len {stft_cfg.fft_len}"
        )
    spectra = stft(noisy, stft_cfg)
    n_spec = spectra.n_frames
    n_feat = estimated_logfb.n_frames
    if abs(n_spec - n_feat) > 1:
        raise ValueError(
            f"feature frames ({n_feat}) and STFT frames ({n_spec}) differ by more than one"
        )
    n = min(n_spec, n_feat)
    if n_spec != n_feat:
        log.warning("truncating to %d frames (features %d, spectra %d)", n, n_feat, n_spec)
        spectra = ComplexSpectra(spectra.frames[:n], stft_cfg, noisy.sample_rate)
        estimated_logfb = FeatureSequence(
            estimated_logfb.vectors[:n], estimated_logfb.kind, estimated_logfb.frame_rate
        )

    gains = evwf_spectral_gains(estimated_logfb, power_spectrum(spectra), fb, cfg)
    return istft(apply_spectral_gains(spectra, gains))


def noise_estimate_initial(power_frames: np.ndarray, n_init: int) -> np.ndarray:
    """Per-bin mean of the first n_init power frames."""
    power_frames = np.asarray(power_frames, dtype=np.float64)
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if power_frames.shape[0] < n_init:
        raise ValueError(
            f"need at least {n_init} frames for the noise estimate, got {power_frames.shape[0]}"
        )
    return power_frames[:n_init].mean(axis=0)


def ss_enhanced_power(power: np.ndarray, noise: np.ndarray, cfg: SsConfig) -> np.ndarray:
    """The subtraction rule: max(|Y|^2 - beta*N, floor*|Y|^2) per bin."""
    return np.maximum(power - cfg.oversub * noise, cfg.floor * power)


def spectral_subtract(noisy: AudioSignal, cfg: SsConfig | None = None,
                      stft_cfg: StftConfig | None = None) -> AudioSignal:
    """Power spectral subtraction with oversubtraction and a spectral floor.

    The noise power is estimated from the first init_frames frames, assumed
    speech-free.
    """
    from .signal_io import make_stft_config

    cfg = cfg or SsConfig()
    stft_cfg = stft_cfg or make_stft_config(noisy.sample_rate)
    if len(noisy) < cfg.init_frames * stft_cfg.hop + stft_cfg.frame_len:
        raise ValueError("signal too short for the initial noise estimate")
    spectra = stft(noisy, stft_cfg)
    power = power_spectrum(spectra)
    noise = noise_estimate_initial(power, cfg.init_frames)
    cleaned = ss_enhanced_power(power, noise, cfg)
    gains = np.sqrt(cleaned / np.maximum(power, 1e-300))
    return istft(apply_spectral_gains(spectra, gains))


def expint_e1(x: float) -> float:
    """Exponential integral E1(x) for x > 0.

    Power series for x <= 1, modified Lentz continued fraction for x > 1;
    absolute error below 1e-9 over the positive axis.
    """
    if x <= 0.0:
        raise ValueError("E1 is only evaluated for x > 0")
    if x <= 1.0:
        total = -_EULER_GAMMA - np.log(x)
        term = 1.0
        for k in range(1, 200):
            term *= -x / k
            contrib = -term / k
            total += contrib
            if abs(contrib) < 1e-18 * max(abs(total), 1.0):
                break
        return total
    # Lentz's method on the continued fraction e^-x / (x + 1 - 1/(x + 3 - 4/...))
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 200):
        a = -i * i
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h * np.exp(-x)


def _expint_e1_array(v: np.ndarray) -> np.ndarray:
    """Vectorized E1 over positive values; same series/fraction split as expint_e1."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    small = v <= 1.0
    if small.any():
        x = v[small]
        total = -_EULER_GAMMA - np.log(x)
        term = np.ones_like(x)
        for k in range(1, 60):
            term *= -x / k
            contrib = -term / k
            total += contrib
            if np.max(np.abs(contrib)) < 1e-18:
                break
        out[small] = total
    if (~small).any():
        x = v[~small]
        tiny = 1e-300
        b = x + 1.0
        c = np.full_like(x, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        for i in range(1, 200):
            a = -float(i * i)
            b = b + 2.0
            d = 1.0 / (a * d + b)
            c = b + a / c
            delta = c * d
            h *= delta
            if np.max(np.abs(delta - 1.0)) < 1e-15:
                break
        out[~small] = h * np.exp(-x)
    return out


def logmmse(noisy: AudioSignal, cfg: LmmseConfig | None = None,
            stft_cfg: StftConfig | None = None) -> AudioSignal:
    """Log-MMSE short-time spectral amplitude enhancement.

    Per frame and bin: a posteriori SNR gamma = |Y|^2 / N, a priori SNR xi by
    decision-directed smoothing of the previous frame's enhanced power,
    v = xi*gamma/(1+xi), and gain G = xi/(1+xi) * exp(E1(v)/2).
    """
    from .signal_io import make_stft_config

    cfg = cfg or LmmseConfig()
    stft_cfg = stft_cfg or make_stft_config(noisy.sample_rate)
    if len(noisy) < cfg.init_frames * stft_cfg.hop + stft_cfg.frame_len:
        raise ValueError("signal too short for the initial noise estimate")
    spectra = stft(noisy, stft_cfg)
    power = power_spectrum(spectra)
    noise = np.maximum(noise_estimate_initial(power, cfg.init_frames), 1e-12)

    n_frames, n_bins = power.shape
    gains = np.empty((n_frames, n_bins))
    prev_enhanced_power = None
    for t in range(n_frames):
        gamma = power[t] / noise
        instant = np.maximum(gamma - 1.0, 0.0)
        if prev_enhanced_power is None:
            xi = cfg.dd_alpha + (1.0 - cfg.dd_alpha) * instant
        else:
            xi = cfg.dd_alpha * prev_enhanced_power / noise + (1.0 - cfg.dd_alpha) * instant
        xi = np.maximum(xi, cfg.xi_min)
        v = np.maximum(xi * gamma / (1.0 + xi), 1e-50)
        g = xi / (1.0 + xi) * np.exp(0.5 * _expint_e1_array(v))
        gains[t] = g
        prev_enhanced_power = (g * g) * power[t]
    return istft(apply_spectral_gains(spectra, gains))
