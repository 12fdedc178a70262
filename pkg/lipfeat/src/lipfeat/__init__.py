"""Lip-region visual feature extraction for audio-visual speech processing.

Decodes a video, finds and tracks the lip region, and emits per-frame visual
features (zig-zag 2D-DCT coefficients or resized grayscale ROI images) as
AVF1 files aligned to an audio feature frame rate.
"""

__version__ = "0.1.0"


class LipfeatError(Exception):
    """Base class for errors raised by this package."""


class VideoDecodeError(LipfeatError):
    """The input video could not be opened or contains no frames."""


class NoLipRegionError(LipfeatError):
    """No frame in the clip produced a usable lip-region detection."""
