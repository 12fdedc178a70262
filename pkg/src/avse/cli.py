"""Batch command-line front end.

Subcommands cover the whole pipeline: log-FB feature extraction, SNR
mixing, synthetic-corpus generation, regressor training, enhancement with
any of the three methods, metric evaluation, and spectrogram emission.

Exit codes: 0 success, 2 usage error (including missing input files),
3 data/format error, 4 numeric failure.
"""

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import enhancers, metrics, regressor
from .errors import AvseError, NumericFailureError
from .filterbank import FeatureKind, FeatureSequence, apply_logfb, build_filterbank
from .ioutil import atomic_write_bytes
from .signal_io import (
    emit_spectrogram,
    make_stft_config,
    power_spectrum,
    read_wav,
    stft,
    write_wav,
)

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Semantically invalid flag combination (exit code 2)."""


def _add_stft_flags(sub):
    sub.add_argument("--frame-ms", type=float, default=16.0, help="analysis frame length in ms")
    sub.add_argument("--hop-ms", type=float, default=10.0, help="frame hop in ms")
    sub.add_argument("--fft-len", type=int, default=2048, help="FFT length in bins")


def _add_fb_flags(sub):
    sub.add_argument("--channels", type=int, default=23, help="filterbank channels")
    sub.add_argument("--f-low", type=float, default=0.0, help="low band edge in Hz")
    sub.add_argument("--f-high", type=float, default=None, help="high band edge in Hz (default Nyquist)")


def _stft_cfg(args, sample_rate):
    return make_stft_config(sample_rate, args.frame_ms, args.hop_ms, args.fft_len)


def _filterbank(args, sample_rate, channels=None):
    return build_filterbank(
        channels if channels is not None else args.channels,
        args.fft_len, sample_rate, args.f_low,
        args.f_high if args.f_high is not None else sample_rate / 2.0,
    )


def _logfb_features(signal, stft_cfg, fb):
    spectra = stft(signal, stft_cfg)
    frame_rate = signal.sample_rate / stft_cfg.hop
    return apply_logfb(power_spectrum(spectra), fb, frame_rate=frame_rate)


def cmd_features_audio(args):
    signal = read_wav(args.wav)
    stft_cfg = _stft_cfg(args, signal.sample_rate)
    fb = _filterbank(args, signal.sample_rate)
    feats = _logfb_features(signal, stft_cfg, fb)
    corpus_mod.write_avf(feats, args.out)
    print(f"wrote {args.out}: {feats.n_frames} frames x {feats.dim} channels")
    return 0


def cmd_mix(args):
    clean = read_wav(args.clean)
    noise = read_wav(args.noise)
    spec = corpus_mod.MixSpec(clean, noise, args.snr, args.seed)
    noisy, scaled, details = corpus_mod.mix_with_details(spec)
    write_wav(noisy, args.out)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["clean", "noise", "snr_db", "achieved_snr_db", "noise_scale", "noise_offset"])
    writer.writerow([Path(args.clean).name, Path(args.noise).name, repr(float(args.snr)),
                     f"{details['achieved_snr_db']:.6f}",
                     repr(details["scale"]), details["offset"]])
    atomic_write_bytes(str(args.out) + ".manifest.csv", buf.getvalue().encode("utf-8"))
    print(f"wrote {args.out}: achieved SNR {details['achieved_snr_db']:.3f} dB")
    return 0


def _read_features(path):
    return corpus_mod.read_avf(path)


def _load_training_data(args):
    """Assemble context windows and split indices from a corpus manifest."""
    entries = corpus_mod.read_manifest(args.manifest)
    if args.snr is not None:
        entries = [e for e in entries if abs(e.snr_db - args.snr) < 1e-9]
        if not entries:
            raise UsageError(f"no manifest rows at snr {args.snr}")
    base = Path(args.manifest).parent

    need_audio = args.mode in ("a_only", "av")
    need_visual = args.mode in ("v_only", "av")
    audio_blocks, visual_blocks, target_blocks = [], [], []
    split_labels = []
    for e in sorted(entries, key=lambda e: (e.utterance_id, e.snr_db)):
        clean = _read_features(base / e.clean_path)
        frames = clean.n_frames
        if need_audio:
            noisy = _read_features(base / e.noisy_path)
            if noisy.n_frames != frames:
                raise AvseError(
                    f"{e.utterance_id}: noisy/clean frame counts differ "
                    f"({noisy.n_frames} vs {frames})"
                )
            audio_blocks.append(regressor.make_context_windows(noisy, args.window))
        if need_visual:
            visual = _read_features(base / e.visual_path)
            if visual.n_frames != frames:
                raise AvseError(
                    f"{e.utterance_id}: visual/clean frame counts differ "
                    f"({visual.n_frames} vs {frames})"
                )
            visual_blocks.append(regressor.make_context_windows(visual, args.window))
        target_blocks.append(clean.vectors)
        split_labels.extend([e.split] * frames)

    data = regressor.WindowDataset(
        targets=np.concatenate(target_blocks),
        audio=np.concatenate(audio_blocks) if audio_blocks else None,
        visual=np.concatenate(visual_blocks) if visual_blocks else None,
    )
    labels = np.asarray(split_labels)
    train_idx = np.nonzero(labels == "train")[0]
    val_idx = np.nonzero(labels == "val")[0]
    if train_idx.size == 0 or val_idx.size == 0:
        raise UsageError("manifest provides no train or no val rows")
    return data, (train_idx, val_idx)


def _int_tuple(text):
    return tuple(int(t) for t in text.split(","))


def cmd_train(args):
    data, split = _load_training_data(args)
    audio_dim = data.audio.shape[2] if data.audio is not None else 23
    output_dim = data.targets.shape[1]
    visual_dim = data.visual.shape[2] if data.visual is not None else 50

    config = regressor.ModelConfig(
        mode=args.mode,
        context_window=args.window,
        audio_dim=audio_dim,
        visual_input=regressor.VisualVector(visual_dim),
        visual_lstm_cells=args.visual_cells,
        audio_lstm_cells=_int_tuple(args.audio_cells),
        fusion_dense=_int_tuple(args.fusion),
        visual_embed_dim=args.embed_dim,
        output_dim=output_dim,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    model = regressor.build_model(config)
    train_cfg = regressor.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    history = regressor.train(model, data, split, train_cfg)
    regressor.save_checkpoint(model, args.out)

    history_path = args.history or str(args.out) + ".history.csv"
    lines = ["epoch,train_mse,val_mse"]
    lines += [f"{epoch},{repr(tm)},{repr(vm)}" for epoch, tm, vm in history]
    atomic_write_bytes(history_path, ("\n".join(lines) + "\n").encode("utf-8"))

    best_val = min(h[2] for h in history)
    print(f"final validation MSE: {best_val}")
    return 0


def _estimate_features(args, noisy, stft_cfg):
    """Clean-feature estimate for EVWF: oracle from --ref, or the regressor."""
    if args.oracle:
        if not args.ref:
            raise UsageError("--oracle requires --ref (the clean reference wav)")
        ref = read_wav(args.ref)
        fb = _filterbank(args, noisy.sample_rate)
        return _logfb_features(ref, stft_cfg, fb), fb

    if not args.model:
        raise UsageError("--method evwf requires --model (or --oracle with --ref)")
    model = regressor.load_checkpoint(args.model)
    cfg = model.config
    # the estimated clean features are lifted through a bank matching the
    # model's output dimension; the noisy input features use audio_dim
    fb = _filterbank(args, noisy.sample_rate, channels=cfg.output_dim)

    audio_windows = None
    visual_windows = None
    n_frames = None
    if cfg.mode in ("a_only", "av"):
        fb_in = fb if cfg.audio_dim == cfg.output_dim else _filterbank(
            args, noisy.sample_rate, channels=cfg.audio_dim)
        noisy_feats = _logfb_features(noisy, stft_cfg, fb_in)
        audio_windows = regressor.make_context_windows(noisy_feats, cfg.context_window)
        n_frames = noisy_feats.n_frames
    if cfg.mode in ("v_only", "av"):
        if not args.visual:
            raise UsageError(f"model mode {cfg.mode} requires --visual features")
        visual = corpus_mod.read_avf(args.visual)
        visual_windows = regressor.make_context_windows(visual, cfg.context_window)
        if n_frames is not None and visual_windows.shape[0] != n_frames:
            n = min(visual_windows.shape[0], n_frames)
            log.warning("aligning visual (%d) and audio (%d) frames to %d",
                        visual_windows.shape[0], n_frames, n)
            visual_windows = visual_windows[:n]
            audio_windows = audio_windows[:n]
            n_frames = n
        elif n_frames is None:
            n_frames = visual_windows.shape[0]

    preds = []
    batch = 256
    for start in range(0, n_frames, batch):
        preds.append(regressor.forward(
            model,
            audio=audio_windows[start : start + batch] if audio_windows is not None else None,
            visual=visual_windows[start : start + batch] if visual_windows is not None else None,
        ))
    estimated = FeatureSequence(np.concatenate(preds), FeatureKind.LOG_FB_AUDIO,
                                noisy.sample_rate / stft_cfg.hop)
    return estimated, fb


def cmd_enhance(args):
    noisy = read_wav(args.noisy)
    stft_cfg = _stft_cfg(args, noisy.sample_rate)

    if args.method == "ss":
        cfg = enhancers.SsConfig(init_frames=args.init_frames, oversub=args.ss_beta,
                                 floor=args.ss_floor)
        enhanced = enhancers.spectral_subtract(noisy, cfg, stft_cfg)
    elif args.method == "lmmse":
        cfg = enhancers.LmmseConfig(init_frames=args.init_frames, dd_alpha=args.dd_alpha)
        enhanced = enhancers.logmmse(noisy, cfg, stft_cfg)
    else:  # evwf
        estimated, fb = _estimate_features(args, noisy, stft_cfg)
        evwf_cfg = enhancers.EvwfConfig(gain_floor=args.gain_floor)
        enhanced = enhancers.evwf_enhance(noisy, estimated, fb, stft_cfg, evwf_cfg)

    write_wav(enhanced, args.out)
    print(f"wrote {args.out} ({args.method})")
    if args.ref:
        ref = read_wav(args.ref)
        report = metrics.evaluate(ref, enhanced, stft_cfg)
        print(f"segsnr_db={report.segsnr_db:.3f} lsd_db={report.lsd_db:.3f} "
              f"frames={report.frames_used}")
    return 0


def cmd_eval(args):
    ref = read_wav(args.ref)
    deg = read_wav(args.deg)
    stft_cfg = _stft_cfg(args, ref.sample_rate)
    report = metrics.evaluate(ref, deg, stft_cfg)
    utt = args.utt or Path(args.deg).stem
    row = [utt, args.method, "" if args.snr is None else repr(float(args.snr)),
           repr(report.segsnr_db), repr(report.lsd_db)]
    line = ",".join(str(c) for c in row)
    if args.out:
        atomic_write_bytes(args.out,
                           ("utterance_id,method,snr_db,segsnr_db,lsd_db\n" + line + "\n").encode())
    print(line)
    return 0


def cmd_spectrogram(args):
    signal = read_wav(args.wav)
    stft_cfg = _stft_cfg(args, signal.sample_rate)
    emit_spectrogram(stft(signal, stft_cfg), args.out, format=args.format)
    print(f"wrote {args.out}")
    return 0


def _float_tuple(text):
    return tuple(float(t) for t in text.split(","))


def cmd_synth_corpus(args):
    cfg = corpus_mod.SynthCorpusConfig(
        utterances=args.utterances,
        frames_per_utterance=args.frames,
        audio_dim=args.audio_dim,
        visual_dim=args.visual_dim,
        snr_levels=_float_tuple(args.snrs),
        coupling_seed=args.coupling_seed,
        noise_seed=args.noise_seed,
    )
    split = corpus_mod.SplitSpec(ratios=_float_tuple(args.split), seed=args.split_seed)
    entries = corpus_mod.synth_av_corpus(cfg, args.outdir, split)
    print(f"wrote {len(entries)} manifest rows under {args.outdir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="avse",
        description="Audio-visual speech enhancement pipeline (batch front end)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features-audio", help="extract log-FB features from a wav")
    p.add_argument("wav")
    p.add_argument("out")
    _add_stft_flags(p)
    _add_fb_flags(p)
    p.set_defaults(func=cmd_features_audio)

    p = sub.add_parser("mix", help="mix clean speech with noise at a target SNR")
    p.add_argument("clean")
    p.add_argument("noise")
    p.add_argument("out")
    p.add_argument("--snr", type=float, required=True, help="target SNR in dB")
    p.add_argument("--seed", type=int, default=0, help="noise-segment offset seed")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train", help="train a regressor on a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=regressor.MODES, default="av")
    p.add_argument("--window", type=int, default=6, help="context window W")
    p.add_argument("--snr", type=float, default=None, help="restrict to one mixing SNR")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--audio-cells", default="250,300")
    p.add_argument("--visual-cells", type=int, default=100)
    p.add_argument("--fusion", default="300,150")
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.20)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", default=None, help="history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a noisy wav")
    p.add_argument("noisy")
    p.add_argument("out")
    p.add_argument("--method", choices=("evwf", "ss", "lmmse"), required=True)
    p.add_argument("--model", default=None, help="EVWM1 checkpoint (evwf)")
    p.add_argument("--visual", default=None, help="visual AVF1 features (v_only/av models)")
    p.add_argument("--oracle", action="store_true",
                   help="use clean-reference features instead of a model (debug)")
    p.add_argument("--ref", default=None, help="clean reference wav (metrics / --oracle)")
    p.add_argument("--gain-floor", type=float, default=0.0)
    p.add_argument("--init-frames", type=int, default=6)
    p.add_argument("--ss-beta", type=float, default=1.0)
    p.add_argument("--ss-floor", type=float, default=0.002)
    p.add_argument("--dd-alpha", type=float, default=0.98)
    _add_stft_flags(p)
    _add_fb_flags(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="segmental SNR and LSD between two wavs")
    p.add_argument("--ref", required=True)
    p.add_argument("--deg", required=True)
    p.add_argument("--out", default=None, help="write a one-row metrics CSV here")
    p.add_argument("--utt", default=None)
    p.add_argument("--method", default="")
    p.add_argument("--snr", type=float, default=None)
    _add_stft_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectrogram", help="emit a dB spectrogram (PGM or CSV)")
    p.add_argument("wav")
    p.add_argument("out")
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    _add_stft_flags(p)
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("synth-corpus", help="generate the synthetic AV feature corpus")
    p.add_argument("outdir")
    p.add_argument("--utterances", type=int, default=24)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--audio-dim", type=int, default=23)
    p.add_argument("--visual-dim", type=int, default=8)
    p.add_argument("--snrs", default="-9,-6,-3,0,3,6,9")
    p.add_argument("--coupling-seed", type=int, default=7)
    p.add_argument("--noise-seed", type=int, default=11)
    p.add_argument("--split", default="0.7,0.1,0.2")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_corpus)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except NumericFailureError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 4
    except (AvseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
