"""Exception types shared across the package."""


class HoneyloopError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HoneyloopError, ValueError):
    """A configuration value is missing, inconsistent or out of range."""


class ValidationError(HoneyloopError, ValueError):
    """An input record failed validation.

    ``field`` names the offending attribute so callers can report it.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class PreconditionError(HoneyloopError, ValueError):
    """An operation was called in a state it does not support."""


class ShapeError(HoneyloopError, ValueError):
    """Array inputs do not match the network layout."""


class NonFiniteGradientError(HoneyloopError, FloatingPointError):
    """An optimizer step received NaN or infinite gradients."""


class OrderingError(HoneyloopError, ValueError):
    """Events were delivered out of timestamp order."""


class ConsistencyError(HoneyloopError, RuntimeError):
    """Internal bookkeeping disagrees with itself."""


class GraphTooLargeError(HoneyloopError, ValueError):
    """A graph exceeds the size bound for exact edit-distance search."""


class FormatError(HoneyloopError, ValueError):
    """A name or persisted file does not follow the expected grammar."""
