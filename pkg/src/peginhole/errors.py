"""Exception hierarchy shared across the package."""


class PegInHoleError(Exception):
    """Base class for all package errors."""


class DegenerateKeypoints(PegInHoleError):
    pass


class GimbalLock(PegInHoleError):
    pass


class InvalidSigma(PegInHoleError):
    pass


class CountOutOfRange(PegInHoleError):
    pass


class EmptyCrop(PegInHoleError):
    pass


class EmptyCloud(PegInHoleError):
    pass


class ShapeMismatch(PegInHoleError):
    pass


class NonFinite(PegInHoleError):
    pass


class NonScalarOutput(PegInHoleError):
    pass


class SamplingExhausted(PegInHoleError):
    pass


class OutOfWorkspace(PegInHoleError):
    pass


class FormatError(PegInHoleError):
    """Base for binary/text file format problems."""


class VersionMismatch(FormatError):
    pass


class CorruptFile(FormatError):
    pass


class ConfigError(PegInHoleError):
    """Unknown key, bad value or otherwise unusable configuration."""
