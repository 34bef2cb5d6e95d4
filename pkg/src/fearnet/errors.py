"""Exception hierarchy shared by every module."""


class FearNetError(Exception):
    """Base class for all package errors."""


class ConfigError(FearNetError, ValueError):
    """Invalid or incomplete configuration."""


class InputError(FearNetError, ValueError):
    """Caller passed data with the wrong shape, range or type."""


class DataError(FearNetError):
    """Dataset could not be read or failed validation."""


class ParseError(DataError):
    """Malformed dataset file. ``offset`` is a line number (CSV) or byte offset (binary)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DataError, ValueError):
    """Dataset parsed but violates an invariant (NaN features, label gaps, zero rows)."""


class StateError(FearNetError, RuntimeError):
    """Operation is not valid in the object's current state."""


class TrainingError(FearNetError, RuntimeError):
    """Optimization diverged or produced non-finite values."""
