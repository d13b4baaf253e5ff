"""Exception classes shared across the package.

The CLI maps these onto exit codes (config 2, data 3, numerics 4), so raise
the most specific class available.
"""


class PlumeRomError(Exception):
    """Base class for all package errors."""


class ConfigError(PlumeRomError):
    """Invalid configuration, bounds, or arguments."""


class DataError(PlumeRomError):
    """Inconsistent, missing, or degenerate data."""


class NumericalError(PlumeRomError):
    """A numerical procedure failed (factorization, optimization)."""
