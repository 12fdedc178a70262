"""Error types shared across the package.

The CLI maps these onto process exit codes: usage problems exit 2,
data/format problems exit 3, numeric failures exit 4.
"""


class AvseError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(AvseError):
    """A file or in-memory structure violates its documented format."""


class MalformedWavError(DataFormatError):
    """WAV container is truncated or structurally invalid."""


class MultichannelWavError(DataFormatError):
    """WAV file has more than one channel; only mono is supported."""


class UnsupportedWavCodecError(DataFormatError):
    """WAV codec is neither 16-bit PCM nor 32-bit IEEE float."""


class NumericFailureError(AvseError):
    """A computation produced NaN/Inf where finite values are required."""
