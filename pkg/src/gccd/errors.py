"""Exception types shared across the package."""


class GccdError(Exception):
    """Base class for all library errors."""


class DimensionError(GccdError, ValueError):
    """Array shapes do not match the operation's contract."""


class StateError(GccdError, RuntimeError):
    """Operation invoked on missing or inconsistent state."""


class NumericalError(GccdError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DataFormatError(GccdError, ValueError):
    """Malformed dataset file; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(GccdError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""
