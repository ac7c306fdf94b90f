"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1 (data or
invariant violations), ConfigError -> 2 (unusable configuration or I/O).
"""


class MarketSelectError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MarketSelectError):
    """Input data or a domain invariant is violated (exit code 1)."""


class ConfigError(MarketSelectError):
    """Configuration, file format, or I/O problem (exit code 2)."""
