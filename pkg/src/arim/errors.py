"""Exception types shared across the toolkit."""


class ArimError(Exception):
    """Base class for all toolkit errors."""


class DomainError(ArimError, ValueError):
    """An argument violates an operation's mathematical domain."""


class ConfigError(ArimError, ValueError):
    """Invalid or inconsistent configuration values."""


class ShapeError(ArimError, ValueError):
    """An array does not match the expected shape."""


class RangeError(ArimError, IndexError):
    """An index is outside the valid range."""


class StateError(ArimError, RuntimeError):
    """Operation invoked in an invalid order, e.g. backward before forward."""


class PersistenceError(ArimError, OSError):
    """Reading or writing an artifact on disk failed."""


class FormatError(ArimError, ValueError):
    """A file exists but its contents do not match the expected format."""


class DivergenceError(ArimError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
