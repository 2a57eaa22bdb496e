"""Exception types shared across the pipeline."""


class IndfindError(Exception):
    """Base class for pipeline errors."""


class ConfigError(IndfindError, ValueError):
    """Invalid configuration or out-of-range parameter."""


class DataError(IndfindError):
    """Malformed, missing or inconsistent input data."""


class NumericError(IndfindError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values)."""
