"""Exception types shared across the package."""


class BanfError(Exception):
    """Base class for package errors."""


class ConfigError(BanfError, ValueError):
    """Inconsistent architecture, schedule or run configuration."""


class NumericError(BanfError, ArithmeticError):
    """A non-finite value appeared in a forward pass, gradient or loss."""


class UsageError(BanfError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""
