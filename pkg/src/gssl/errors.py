"""Exception types shared across the package."""


class GsslError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GsslError, ValueError):
    """Invalid argument: bad shape, out-of-range id, malformed file, ..."""


class NumericError(GsslError, ArithmeticError):
    """A computation produced NaN/Inf or an unsolvable system."""
