"""Command line: lipfeat <video> -o <out.avf> [options]."""

import argparse
import sys
from pathlib import Path

import cv2

from . import LipfeatError
from .avf import emit_visual_avf
from .detect import detect_and_track
from .features import DctFeatures, ImageFeatures
from .video import extract_frames


def _parse_size(text):
    try:
        h, w = (int(t) for t in text.lower().split("x"))
        return h, w
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lipfeat",
        description="Extract lip-region visual features from a video into an AVF1 file",
    )
    parser.add_argument("video")
    parser.add_argument("-o", "--out", required=True, help="output .avf path")
    parser.add_argument("--mode", choices=("dct", "image"), default="dct")
    parser.add_argument("--coeffs", type=int, default=50, help="DCT coefficients (dct mode)")
    parser.add_argument("--size", type=_parse_size, default=(64, 64),
                        help="ROI size HxW (image mode)")
    parser.add_argument("--target-rate", type=float, default=100.0,
                        help="output feature frame rate in Hz")
    parser.add_argument("--report", default=None,
                        help="directory for per-frame ROI thumbnails (spot checking)")
    return parser


def _write_report(report_dir, frames, track):
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        if not track.valid[i]:
            continue
        x, y, w, h = track.boxes[i]
        cv2.imwrite(str(out / f"roi_{i:05d}.png"), frame[y : y + h, x : x + w])


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    spec = (DctFeatures(args.coeffs) if args.mode == "dct"
            else ImageFeatures(*args.size))
    try:
        frames, fps = extract_frames(args.video)
        track = detect_and_track(frames)
        n_out = emit_visual_avf(frames, fps, track, spec, args.target_rate, args.out)
        if args.report:
            _write_report(args.report, frames, track)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except (LipfeatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {args.out}: {n_out} frames at {args.target_rate:g} Hz "
          f"({int(track.valid.sum())}/{track.n_frames} frames detected)")
    return 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
