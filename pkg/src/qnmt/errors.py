"""Exception types raised by the engine."""


class QnmtError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(QnmtError):
    """Input data violates a precondition (non-finite values, bad lengths)."""


class ShapeError(QnmtError):
    """Operand dimensions do not agree."""


class FormatError(QnmtError):
    """Model file is malformed. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(FormatError):
    """Model file parsed but its contents are inconsistent."""


class VocabError(QnmtError):
    """Token id outside the declared vocabulary."""


class EmptyInputError(QnmtError):
    """An operation that requires input received none."""


class ConfigError(QnmtError):
    """Invalid or inconsistent configuration."""


class ParameterError(QnmtError):
    """Invalid model-construction parameter."""


class NumericError(QnmtError):
    """Numeric computation received or produced non-finite values."""
