"""Noisy-mixing harness, dataset splitting, the synthetic audio-visual
feature corpus, and AVF1 feature-file I/O.

The synthetic corpus stands in for real recorded AV data at desk scale: a
smooth latent "articulator" trajectory drives both the clean audio features
and the visual features through fixed linear maps, so visual cues genuinely
carry information about the clean speech, and noisy variants contaminate the
clean features at controlled SNR.
"""

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .filterbank import FeatureKind, FeatureSequence
from .ioutil import atomic_write_bytes
from .signal_io import AudioSignal

AVF_MAGIC = b"AVF1"


@dataclass
class MixSpec:
    clean: AudioSignal
    noise: AudioSignal
    snr_db: float
    seed: int = 0


@dataclass
class SplitSpec:
    """(train, val, test) fractions plus the shuffle seed."""

    ratios: tuple = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError("need three positive split fractions")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(self.ratios)}")


@dataclass
class SynthCorpusConfig:
    utterances: int = 24
    frames_per_utterance: int = 120
    audio_dim: int = 23
    visual_dim: int = 8
    snr_levels: tuple = (-9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0)
    coupling_seed: int = 7
    noise_seed: int = 11

    def __post_init__(self):
        if self.utterances < 1 or self.frames_per_utterance < 1:
            raise ValueError("utterance and frame counts must be >= 1")
        if self.audio_dim < 1 or self.visual_dim < 1:
            raise ValueError("feature dimensions must be >= 1")
        self.snr_levels = tuple(float(s) for s in self.snr_levels)


def mix_with_details(spec: MixSpec):
    """Mix clean speech with a seeded noise segment scaled to the target SNR.

    Returns (noisy, scaled_noise, details) where details records the chosen
    segment offset, the amplitude scale, and the achieved SNR.  The offset
    depends only on the seed, so sweeping snr_db reuses the same segment
    with a different scale, and the achieved SNR equals the target by
    construction.
    """
    clean, noise = spec.clean, spec.noise
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: clean {clean.sample_rate}, noise {noise.sample_rate}"
        )
    n = len(clean)
    if len(noise) < n:
        raise ValueError(f"noise ({len(noise)} samples) shorter than clean ({n})")
    p_clean = float(np.mean(clean.samples**2))
    if p_clean == 0.0:
        raise ValueError("clean signal has zero power")

    rng = np.random.default_rng(spec.seed)
    offset = int(rng.integers(0, len(noise) - n + 1))
    segment = noise.samples[offset : offset + n]
    p_noise = float(np.mean(segment**2))
    if p_noise == 0.0:
        raise ValueError("selected noise segment has zero power")

    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    scaled = segment * scale
    achieved = 10.0 * math.log10(p_clean / float(np.mean(scaled**2)))
    details = {"offset": offset, "scale": scale, "achieved_snr_db": achieved}
    return (
        AudioSignal(clean.samples + scaled, clean.sample_rate),
        AudioSignal(scaled, clean.sample_rate),
        details,
    )


def mix_at_snr(spec: MixSpec):
    """Mix clean speech with noise at a target SNR; returns (noisy, scaled_noise)."""
    noisy, scaled, _ = mix_with_details(spec)
    return noisy, scaled


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(item_ids, spec: SplitSpec):
    """Seeded shuffle then contiguous cuts; returns (train, val, test) lists."""
    items = list(item_ids)
    if not items:
        raise ValueError("cannot split an empty list")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    n = len(items)
    cut1 = _round_half_up(n * spec.ratios[0])
    cut2 = _round_half_up(n * (spec.ratios[0] + spec.ratios[1]))
    return shuffled[:cut1], shuffled[cut1:cut2], shuffled[cut2:]


def write_avf(seq: FeatureSequence, path) -> None:
    """Write the AVF1 binary feature format (float32 little-endian payload)."""
    t, m = seq.vectors.shape
    header = AVF_MAGIC + struct.pack("<IIId", int(seq.kind), t, m, float(seq.frame_rate))
    payload = np.ascontiguousarray(seq.vectors, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_avf(path) -> FeatureSequence:
    """Read an AVF1 file; bit-exact inverse of write_avf."""
    data = Path(path).read_bytes()
    head_len = len(AVF_MAGIC) + struct.calcsize("<IIId")
    if len(data) < head_len or data[: len(AVF_MAGIC)] != AVF_MAGIC:
        raise DataFormatError(f"{path}: not an AVF1 file")
    kind_code, t, m, frame_rate = struct.unpack_from("<IIId", data, len(AVF_MAGIC))
    try:
        kind = FeatureKind(kind_code)
    except ValueError:
        raise DataFormatError(f"{path}: feature kind {kind_code} out of range") from None
    expected = 4 * t * m
    actual = len(data) - head_len
    if actual != expected:
        raise DataFormatError(
            f"{path}: expected {expected} payload bytes for {t}x{m}, found {actual}"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=t * m, offset=head_len)
    return FeatureSequence(vectors.reshape(t, m).astype(np.float64), kind, frame_rate)


@dataclass
class CorpusEntry:
    """One manifest row: an utterance at one mixing SNR."""

    utterance_id: str
    split: str
    snr_db: float
    clean_path: str
    visual_path: str
    noisy_path: str


def write_manifest(entries, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["utterance_id", "split", "snr_db", "clean_path", "visual_path", "noisy_path"])
    for e in entries:
        writer.writerow([e.utterance_id, e.split, repr(e.snr_db),
                         e.clean_path, e.visual_path, e.noisy_path])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_manifest(path):
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"utterance_id", "split", "snr_db", "clean_path", "visual_path", "noisy_path"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataFormatError(f"{path}: manifest missing columns {sorted(required)}")
        for row in reader:
            entries.append(CorpusEntry(
                utterance_id=row["utterance_id"],
                split=row["split"],
                snr_db=float(row["snr_db"]),
                clean_path=row["clean_path"],
                visual_path=row["visual_path"],
                noisy_path=row["noisy_path"],
            ))
    if not entries:
        raise DataFormatError(f"{path}: empty manifest")
    return entries


# Latent trajectories carry a few more degrees of freedom than the visual
# observation, so a single visual frame underdetermines the state.  Clean
# features mix the current latent position with recent latent increments
# (articulator velocity over a few lag spans): a random walk's lagged
# positions stay highly correlated with the current one, but its increments
# are independent of it, so they are unpredictable from one frame and
# exactly revealed by a context window that spans the lag.  The walk step is
# scaled so the latent standard deviation at the end of an utterance is
# about _LATENT_END_STD regardless of utterance length.
_LATENT_EXTRA_DIMS = 4
_LATENT_END_STD = 0.75
_CLEAN_NOISE_STD = 0.1
_INCREMENT_SPANS = ((0, 1), (1, 2), (2, 4), (4, 8))
_INCREMENT_GAIN = 1.25


def _smooth(x: np.ndarray) -> np.ndarray:
    """3-frame moving average along axis 0 (edges use the available frames)."""
    kernel = np.ones(3) / 3.0
    out = np.empty_like(x)
    counts = np.convolve(np.ones(x.shape[0]), kernel, mode="same")
    for j in range(x.shape[1]):
        out[:, j] = np.convolve(x[:, j], kernel, mode="same") / counts
    return out


def synth_av_corpus(cfg: SynthCorpusConfig, outdir, split_spec: SplitSpec | None = None):
    """Generate the synthetic feature corpus and its manifest.

    Per utterance: a seeded random-walk latent trajectory (low-passed by a
    3-frame moving average) is mapped through fixed linear maps to clean
    audio features (plus small observation noise) and to visual features;
    noisy variants add feature-domain noise scaled from each SNR level.
    Returns the manifest entries; files land under outdir.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    split_spec = split_spec or SplitSpec(seed=cfg.noise_seed)

    latent_dim = cfg.visual_dim + _LATENT_EXTRA_DIMS
    coupling_rng = np.random.default_rng(cfg.coupling_seed)
    scale = 1.0 / math.sqrt(latent_dim * (1 + len(_INCREMENT_SPANS)))
    position_map = coupling_rng.normal(0.0, scale, (latent_dim, cfg.audio_dim))
    increment_maps = [coupling_rng.normal(0.0, scale, (latent_dim, cfg.audio_dim))
                      for _ in _INCREMENT_SPANS]
    visual_map = coupling_rng.normal(0.0, 1.0 / math.sqrt(latent_dim),
                                     (latent_dim, cfg.visual_dim))

    ids = [f"u{i:04d}" for i in range(cfg.utterances)]
    train, val, test = split_dataset(ids, split_spec)
    split_of = {u: "train" for u in train}
    split_of.update({u: "val" for u in val})
    split_of.update({u: "test" for u in test})

    seeds = np.random.SeedSequence(cfg.noise_seed).spawn(cfg.utterances)
    step_std = _LATENT_END_STD / math.sqrt(cfg.frames_per_utterance)
    entries = []
    n_frames = cfg.frames_per_utterance
    max_lag = max(b for _, b in _INCREMENT_SPANS)
    for idx, utt in enumerate(ids):
        rng = np.random.default_rng(seeds[idx])
        steps = rng.normal(0.0, step_std, (n_frames, latent_dim))
        latents = _smooth(np.cumsum(steps, axis=0))
        # lagged view: early frames repeat the first latent, matching the
        # context-window padding convention
        padded = np.concatenate([np.repeat(latents[:1], max_lag, axis=0), latents])

        def lagged(lag):
            return padded[max_lag - lag : max_lag - lag + n_frames]

        clean = latents @ position_map + rng.normal(0.0, _CLEAN_NOISE_STD,
                                                    (n_frames, cfg.audio_dim))
        for (near, far), imap in zip(_INCREMENT_SPANS, increment_maps):
            # normalize each increment span to the position scale
            gain = _INCREMENT_GAIN * _LATENT_END_STD / (step_std * math.sqrt(far - near))
            clean += ((lagged(near) - lagged(far)) * gain) @ imap
        visual = latents @ visual_map

        clean_path = f"{utt}_clean.avf"
        visual_path = f"{utt}_visual.avf"
        write_avf(FeatureSequence(clean, FeatureKind.LOG_FB_AUDIO), outdir / clean_path)
        write_avf(FeatureSequence(visual, FeatureKind.VISUAL), outdir / visual_path)

        clean_std = float(clean.std())
        for snr in cfg.snr_levels:
            contamination = clean_std * 10.0 ** (-snr / 20.0)
            noisy = clean + contamination * rng.standard_normal(clean.shape)
            noisy_path = f"{utt}_noisy_snr{snr:+g}.avf"
            write_avf(FeatureSequence(noisy, FeatureKind.LOG_FB_AUDIO), outdir / noisy_path)
            entries.append(CorpusEntry(
                utterance_id=utt,
                split=split_of[utt],
                snr_db=snr,
                clean_path=clean_path,
                visual_path=visual_path,
                noisy_path=noisy_path,
            ))
    write_manifest(entries, outdir / "manifest.csv")
    return entries
