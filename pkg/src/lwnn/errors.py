"""Exception hierarchy shared by every lwnn module."""


class LwnnError(Exception):
    """Base class for all errors raised by lwnn."""


class InvalidParameterError(LwnnError, ValueError):
    """Wavelet angles that are not finite real numbers."""


class NoFitError(LwnnError):
    """No (alpha, beta) reproduces a target filter closely enough."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class DimensionError(LwnnError, ValueError):
    """Array shapes incompatible with the requested transform."""


class StateError(LwnnError, RuntimeError):
    """A backward pass without a matching, unconsumed forward cache."""


class ConfigError(LwnnError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(LwnnError, ValueError):
    """Malformed or inconsistent dataset contents."""


class CheckpointError(LwnnError, ValueError):
    """Unreadable, truncated or incompatible checkpoint file."""


class DivergenceError(LwnnError, ArithmeticError):
    """Training produced a non-finite loss."""
