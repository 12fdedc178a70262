"""Video decoding."""

from pathlib import Path

import cv2
import numpy as np

from . import VideoDecodeError


def extract_frames(video_path):
    """Decode a video into grayscale frames.

    Returns (frames, fps): a list of 2-D uint8 arrays in decode order and
    the container's frame rate.
    """
    path = Path(video_path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise VideoDecodeError(f"{path}: cannot open video")
        fps = float(cap.get(cv2.CAP_PROP_FPS))
        frames = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if frame.ndim == 3:
                frame = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
            frames.append(np.ascontiguousarray(frame, dtype=np.uint8))
    finally:
        cap.release()
    if not frames:
        raise VideoDecodeError(f"{path}: no decodable frames")
    if not (fps and fps > 0):
        fps = 25.0  # some containers omit the rate; assume the recording default
    return frames, fps
