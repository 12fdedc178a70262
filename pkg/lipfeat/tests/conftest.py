"""Fixture clips: a synthetic face-like template with a dark mouth ellipse,
rendered to a real video file so the whole decode-detect-track-emit path
runs on actual container data."""

from pathlib import Path

import cv2
import numpy as np
import pytest


def render_face_frame(size=128, mouth_shift=(0, 0)):
    """Light elliptical face on dark ground, dark eyes, dark mouth ellipse."""
    img = np.full((size, size), 40, dtype=np.uint8)
    centre = (size // 2, size // 2)
    cv2.ellipse(img, centre, (int(0.42 * size), int(0.48 * size)), 0, 0, 360, 200, -1)
    for cx in (int(0.35 * size), int(0.65 * size)):
        cv2.circle(img, (cx, int(0.38 * size)), max(2, int(0.05 * size)), 70, -1)
    mx = size // 2 + mouth_shift[0]
    my = int(0.72 * size) + mouth_shift[1]
    cv2.ellipse(img, (mx, my), (int(0.16 * size), int(0.07 * size)), 0, 0, 360, 55, -1)
    return img


def write_clip(path, frames, fps=25.0):
    height, width = frames[0].shape
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"),
                             fps, (width, height), False)
    assert writer.isOpened()
    for frame in frames:
        writer.write(frame)
    writer.release()
    return Path(path)


@pytest.fixture(scope="session")
def static_face_clip(tmp_path_factory):
    path = tmp_path_factory.mktemp("clips") / "face_static.avi"
    frames = [render_face_frame() for _ in range(20)]
    return write_clip(path, frames)


@pytest.fixture(scope="session")
def moving_face_clip(tmp_path_factory):
    path = tmp_path_factory.mktemp("clips") / "face_moving.avi"
    frames = [render_face_frame(mouth_shift=(0, (i % 4) - 2)) for i in range(20)]
    return write_clip(path, frames)


@pytest.fixture(scope="session")
def black_clip(tmp_path_factory):
    path = tmp_path_factory.mktemp("clips") / "black.avi"
    frames = [np.zeros((96, 96), dtype=np.uint8) for _ in range(10)]
    return write_clip(path, frames)
