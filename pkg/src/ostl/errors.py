class OSTLError(Exception):
    """Base class for all errors raised by the package."""


class DataError(OSTLError):
    """Malformed, missing or inconsistent input data."""


class NumericError(OSTLError):
    """A numerical construction or propagation broke down."""
