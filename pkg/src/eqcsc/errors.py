"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


class NonFiniteError(ArithmeticError):
    """A stage produced NaN or Inf; message names the stage."""


class DivergenceError(RuntimeError):
    """Fixed-point iteration diverged. Carries the residual trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class CubeFormatError(ValueError):
    """Base class for cube container violations."""


class BadMagicError(CubeFormatError):
    pass


class UnsupportedVersionError(CubeFormatError):
    pass


class TruncatedPayloadError(CubeFormatError):
    pass


class ChecksumError(CubeFormatError):
    pass


class ConfigError(ValueError):
    """Config file could not be parsed or contains unknown keys."""


class TrainingAbortedError(RuntimeError):
    """Raised when more than half the samples in an epoch had to be skipped."""
