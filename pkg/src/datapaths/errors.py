"""Exception types shared across the package."""


class DatapathsError(Exception):
    """Base class for all package errors."""

    code = "error"


class DimensionError(DatapathsError):
    """Tensor shapes do not chain or do not match a declared shape."""

    code = "dimension"


class NumericError(DatapathsError):
    """A computation produced a non-finite intermediate."""

    code = "numeric"


class ParseError(DatapathsError):
    """A document could not be parsed; ``path`` points at the offending field."""

    code = "parse"

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ValidationError(DatapathsError):
    """A parsed document violates an invariant; ``path`` points at the field."""

    code = "validation"

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TrainingError(DatapathsError):
    """Training diverged; ``epoch`` names the failing epoch."""

    code = "training"

    def __init__(self, message, epoch):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ExtractionError(DatapathsError):
    """Gate optimization diverged; ``iteration`` names the failing step."""

    code = "extraction"

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class UnknownIdError(DatapathsError):
    """A referenced entity id does not resolve."""

    code = "unknown_id"
