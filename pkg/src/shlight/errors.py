"""Exception types shared across the package."""


class ShlError(Exception):
    """Base class for all package errors."""


class InvalidArgument(ShlError, ValueError):
    pass


class InvalidState(ShlError, RuntimeError):
    pass


class ShapeError(ShlError, ValueError):
    pass


class NumericError(ShlError, ArithmeticError):
    pass


class ParseError(ShlError, ValueError):
    """Malformed file contents. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
