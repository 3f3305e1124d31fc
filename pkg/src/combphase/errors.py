"""Exception types raised across the package."""


class CombPhaseError(Exception):
    """Base class for all package errors."""


class InputShapeError(CombPhaseError, ValueError):
    """Array lengths or sample grids do not match what an operation needs."""


class ConfigError(CombPhaseError, ValueError):
    """A parameter is outside the range an operation supports."""


class DegenerateInputError(CombPhaseError, ValueError):
    """Input carries no usable information (zero variance, coincident indices...)."""


class LowConfidenceError(CombPhaseError, RuntimeError):
    """An estimator could not find a dominant solution."""


class ConvergenceError(CombPhaseError, RuntimeError):
    """An adaptive equalizer diverged."""


class TrackingError(CombPhaseError, RuntimeError):
    """A slave channel lost phase lock."""


class AlignmentError(CombPhaseError, RuntimeError):
    """A stream could not be aligned with its reference symbols."""


class WaveformFormatError(CombPhaseError, ValueError):
    """A waveform file is malformed or truncated."""
