"""Exception hierarchy shared across the package."""


class AcousticContactError(Exception):
    """Base class for all package errors."""


# audio_io
class WavError(AcousticContactError, ValueError):
    pass


class NotWav(WavError):
    pass


class UnsupportedEncoding(WavError):
    pass


class MultiChannel(WavError):
    pass


class TruncatedData(WavError):
    pass


# framing / features
class InvalidConfig(AcousticContactError, ValueError):
    pass


class NegativeFrequency(AcousticContactError, ValueError):
    pass


class InvalidBand(InvalidConfig):
    pass


class TooManyBands(InvalidConfig):
    pass


class WindowTooShort(AcousticContactError, ValueError):
    pass


# nn
class ShapeMismatch(AcousticContactError, ValueError):
    pass


class LabelOutOfRange(AcousticContactError, ValueError):
    pass


class CheckpointError(AcousticContactError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


# classify
class ClassTooSmall(AcousticContactError, ValueError):
    pass


class EmptyDataset(AcousticContactError, ValueError):
    pass


# synth
class InvalidDuration(AcousticContactError, ValueError):
    pass


# stream
class DigestMismatch(AcousticContactError):
    pass


class MalformedPcm(AcousticContactError, ValueError):
    pass


class SourceEnded(AcousticContactError):
    """Normal end of a PCM source."""
