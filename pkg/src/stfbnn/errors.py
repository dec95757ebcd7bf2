"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up for the requested operation."""


class InputError(ValueError):
    """An argument value is outside the operation's domain."""


class FormatError(ValueError):
    """A file on disk does not match its expected binary/text format."""


class UsageError(RuntimeError):
    """The API was called out of contract (e.g. stale cache, wrong model kind)."""


class TrainingError(RuntimeError):
    """Training diverged. Carries the epoch at which the loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class SingularityError(ValueError):
    """A zero row (or similar degenerate input) makes the result undefined."""

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


class RegionError(RuntimeError):
    """The ReLU activation pattern failed to stabilize along a scaling ray."""


class ConfigError(ValueError):
    """An experiment config failed validation. Carries the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
