class SSLOSRError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(SSLOSRError, ValueError):
    pass


class FormatError(SSLOSRError):
    """A data file does not match its declared layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    pass


class IntegrityError(SSLOSRError):
    """A checkpoint or manifest failed validation on restore."""


class NumericError(SSLOSRError, ArithmeticError):
    pass
