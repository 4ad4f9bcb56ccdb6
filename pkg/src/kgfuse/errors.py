"""Exception hierarchy shared by all kgfuse modules."""


class KgfuseError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(KgfuseError):
    """Bad inputs: malformed files, shape mismatches, out-of-range arguments."""


class NumericsError(KgfuseError):
    """Non-finite values or other numeric failures during computation."""
