"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract
    (shape mismatch, empty input, out-of-range index, ...)."""


class FileFormatError(ValueError):
    """A data file does not match its declared binary or JSON format.

    Carries the byte offset of the first offending field when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
