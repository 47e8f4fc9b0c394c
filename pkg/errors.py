class AgeExtractionError(Exception):
    """Base class for errors raised by the age extraction library."""


class InputFormatError(AgeExtractionError):
    """Input does not match the expected schema or file format."""

    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{message} (field: {field})" if field else message)


class TrainingError(AgeExtractionError):
    """Training data is degenerate (empty, single class, no positives)."""


class EvaluationInputError(AgeExtractionError):
    """Predictions or gold annotations are inconsistent (duplicate or unknown ids)."""
