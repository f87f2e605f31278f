"""Exception types shared across the package."""


class BackupCbfError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(BackupCbfError):
    """An input's shape does not match the declared system dimensions."""


class ParameterError(BackupCbfError):
    """A scalar parameter, grid, or configuration value is inadmissible."""


class PropagationError(BackupCbfError):
    """Flow propagation produced a non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(BackupCbfError):
    """A run configuration file or override is malformed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
