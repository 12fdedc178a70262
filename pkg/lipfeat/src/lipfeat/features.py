"""ROI-to-feature conversion: crop, resize, normalize, and either zig-zag
2D-DCT coefficients or flattened image pixels."""

from dataclasses import dataclass

import cv2
import numpy as np
import scipy.fft

DCT_WORK_SIZE = (64, 64)


@dataclass(frozen=True)
class DctFeatures:
    n_coeffs: int = 50

    def __post_init__(self):
        if self.n_coeffs < 1:
            raise ValueError("need at least one DCT coefficient")


@dataclass(frozen=True)
class ImageFeatures:
    height: int = 64
    width: int = 64

    def __post_init__(self):
        for dim in (self.height, self.width):
            if dim < 1 or dim > 128 or dim & (dim - 1):
                raise ValueError("image dimensions must be powers of two <= 128")


def zigzag_indices(height, width):
    """(row, col) pairs in JPEG zig-zag order over a height x width grid."""
    order = []
    for s in range(height + width - 1):
        rows = range(max(0, s - width + 1), min(height - 1, s) + 1)
        if s % 2 == 0:
            rows = reversed(rows)
        order.extend((i, s - i) for i in rows)
    return order


def _normalize(patch):
    patch = patch.astype(np.float64)
    patch -= patch.mean()
    std = patch.std()
    if std > 1e-12:
        patch /= std
    return patch


def roi_to_features(frame, box, spec):
    """Crop the box, resize, normalize to zero mean/unit variance, and encode.

    DCT mode: orthonormal type-II 2D-DCT on a 64x64 working patch, first
    n_coeffs coefficients in zig-zag order.  Image mode: flattened pixels.
    """
    x, y, w, h = (int(v) for v in box)
    if w < 4 or h < 4:
        raise ValueError(f"degenerate box {box!r}: sides must be >= 4 px")
    if x < 0 or y < 0 or x + w > frame.shape[1] or y + h > frame.shape[0]:
        raise ValueError(f"box {box!r} exceeds frame bounds {frame.shape}")
    patch = frame[y : y + h, x : x + w]

    if isinstance(spec, DctFeatures):
        work = cv2.resize(patch.astype(np.float64), DCT_WORK_SIZE,
                          interpolation=cv2.INTER_AREA)
        work = _normalize(work)
        coeffs = scipy.fft.dctn(work, type=2, norm="ortho")
        order = zigzag_indices(*work.shape)[: spec.n_coeffs]
        return np.array([coeffs[i, j] for i, j in order])
    if isinstance(spec, ImageFeatures):
        work = cv2.resize(patch.astype(np.float64), (spec.width, spec.height),
                          interpolation=cv2.INTER_AREA)
        return _normalize(work).ravel()
    raise TypeError(f"unknown feature spec {spec!r}")
