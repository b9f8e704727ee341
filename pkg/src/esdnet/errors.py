"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violated a shape or range precondition."""


class NaNError(FloatingPointError):
    """A non-finite value appeared in a forward or backward pass.

    ``node`` holds the tape node id (or parameter name) where it surfaced.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class FormatError(ValueError):
    """A file on disk could not be decoded (bad magic, CRC, layout)."""
