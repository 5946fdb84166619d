"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have missing, incompatible, or degenerate dimensions."""


class ParameterError(ValueError):
    """An argument is outside its documented range or inconsistent with another."""


class DataError(ValueError):
    """Input data violates a content invariant (non-finite values, empty calibration set, ...)."""


class FileFormatError(DataError):
    """A binary or JSON artifact does not match its documented layout."""
