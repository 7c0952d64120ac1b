"""Exception taxonomy shared across the package."""


class MetafnError(Exception):
    """Base class for all package errors."""


class DimensionError(MetafnError):
    """Array shapes are inconsistent with an operation's contract."""


class ConfigError(MetafnError):
    """Invalid model or run configuration."""


class DataError(MetafnError):
    """Malformed or inconsistent input data."""


class UsageError(MetafnError):
    """An API or CLI call violates a precondition."""


class CheckpointError(MetafnError):
    """A checkpoint file is incompatible, truncated, or corrupt."""
