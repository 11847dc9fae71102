"""Exception hierarchy shared by every module."""


class DrddlError(Exception):
    """Base class for all package errors."""


class NumericalError(DrddlError, ArithmeticError):
    """A solver produced non-finite values or a factorization failed."""


class DegenerateInput(DrddlError, ValueError):
    """Input violates a precondition (empty class, zero data, bad shape)."""


class FormatError(DrddlError, ValueError):
    """A file or header does not match the expected layout."""


class IoError(DrddlError, OSError):
    """A file could not be read or written."""
