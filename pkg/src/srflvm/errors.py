"""Exception hierarchy shared across the package."""


class SrflvmError(Exception):
    """Base class for all package errors."""


class ValidationError(SrflvmError):
    """Invalid input data or configuration (CLI exit code 2)."""


class ShapeError(ValidationError):
    """Array dimensions do not agree."""


class NumericDegeneracyError(SrflvmError):
    """A numerically singular system was encountered (CLI exit code 3)."""
