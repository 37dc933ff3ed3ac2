"""Exception types shared across the package."""


class DarecError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DarecError, ValueError):
    pass


class EmptyShapeError(DarecError, ValueError):
    """Raised when an operation needs at least one occupied cell."""


class ConfigError(DarecError, ValueError):
    pass


class DivergenceError(DarecError, RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FrozenModelError(DarecError, RuntimeError):
    pass


class ChecksumMismatchError(DarecError, RuntimeError):
    pass
