"""AVF1 output: the binary feature-file format consumed downstream.

Layout: magic "AVF1", little-endian u32 kind (2 = visual), u32 frame count,
u32 dimension, f64 frame rate, then float32 values row-major.  Features for
invalid frames are filled from the nearest valid frame, and the sequence is
resampled from the video rate to the target feature rate by nearest-frame
repetition.
"""

import os
import struct
from pathlib import Path

import numpy as np

from . import NoLipRegionError
from .features import roi_to_features

AVF_MAGIC = b"AVF1"
VISUAL_KIND = 2


def write_avf_visual(vectors, frame_rate, path) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    t, m = vectors.shape
    header = AVF_MAGIC + struct.pack("<IIId", VISUAL_KIND, t, m, float(frame_rate))
    payload = np.ascontiguousarray(vectors, dtype="<f4").tobytes()
    tmp = Path(path).with_name(Path(path).name + f".tmp{os.getpid()}")
    try:
        tmp.write_bytes(header + payload)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def nearest_valid_fill(valid):
    """Index of the nearest valid frame for every frame (earlier wins ties)."""
    valid_idx = np.nonzero(valid)[0]
    if valid_idx.size == 0:
        raise NoLipRegionError("cannot fill: no valid frames")
    targets = np.arange(valid.size)
    pos = np.searchsorted(valid_idx, targets)
    left = valid_idx[np.clip(pos - 1, 0, valid_idx.size - 1)]
    right = valid_idx[np.clip(pos, 0, valid_idx.size - 1)]
    take_left = np.abs(targets - left) <= np.abs(right - targets)
    return np.where(take_left, left, right)


def resample_indices(n_frames, source_rate, target_rate):
    """Nearest-frame repetition mapping, e.g. 25 -> 100 fps repeats each 4x."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    out_count = max(1, int(np.floor(n_frames * target_rate / source_rate)))
    return (np.arange(out_count) * source_rate / target_rate).astype(np.int64)


def emit_visual_avf(frames, fps, track, spec, target_rate, out_path):
    """Convert a tracked clip to an AVF1 visual feature file.

    Invalid frames borrow the nearest valid frame's features; the sequence
    is then upsampled to target_rate (100 frames/s matches a 10 ms audio
    hop) by repetition.
    """
    source = nearest_valid_fill(track.valid)
    cache = {}
    rows = []
    for idx in source:
        if idx not in cache:
            cache[idx] = roi_to_features(frames[idx], track.boxes[idx], spec)
        rows.append(cache[idx])
    per_frame = np.vstack(rows)
    mapping = resample_indices(len(frames), fps, target_rate)
    write_avf_visual(per_frame[mapping], target_rate, out_path)
    return mapping.size
