"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """A value lies outside the domain an operation accepts."""


class ContractError(RuntimeError):
    """A caller-side precondition was violated (e.g. backward on a non-scalar)."""


class FormatError(ValueError):
    """A binary file does not follow its declared layout.

    ``offset`` is the byte position where parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """Invalid run configuration or model specification."""


class UnsupportedExportError(ValueError):
    """The model cannot be written as integer codes."""
