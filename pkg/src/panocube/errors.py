"""Exception taxonomy shared across the package."""


class PanocubeError(Exception):
    """Base class for all package errors."""


class DomainError(PanocubeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(PanocubeError, ValueError):
    """Inconsistent shapes, invalid configuration values, or bad keys."""


class NumericsError(PanocubeError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class CheckpointError(PanocubeError, RuntimeError):
    """A checkpoint file is malformed, truncated, or of the wrong version."""
