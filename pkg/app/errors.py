from typing import List, Optional


# Process exit codes, one per failure family
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRANSPORT = 4
EXIT_VALIDATION = 5


class SymptomCoderError(Exception):
    """Base error. Carries a human readable detail and the exit code the CLI returns."""
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(SymptomCoderError):
    """Invalid run configuration or an unreachable backend at startup."""
    exit_code = EXIT_CONFIG


class DataIOError(SymptomCoderError):
    """A file could not be read or written."""
    exit_code = EXIT_IO


class TransportError(SymptomCoderError):
    """Remote call failed after the retry budget was spent."""
    exit_code = EXIT_TRANSPORT

    def __init__(self, detail: str, status_code: Optional[int] = None):
        super().__init__(detail)
        self.status_code = status_code


class CredentialError(TransportError):
    """The endpoint rejected our credentials. Never retried."""


class ValidationFailure(SymptomCoderError):
    """Input data violates a documented invariant."""
    exit_code = EXIT_VALIDATION


class SchemaError(ValidationFailure):
    pass


class DuplicateIdError(ValidationFailure):
    pass


class DatasetParseError(ValidationFailure):
    def __init__(self, detail: str, line: int):
        super().__init__(f"line {line}: {detail}")
        self.line = line


class DatasetValidationError(ValidationFailure):
    def __init__(self, detail: str, report_id: Optional[str] = None, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        where = f"report {report_id}: " if report_id is not None else ""
        super().__init__(f"{prefix}{where}{detail}")
        self.report_id = report_id
        self.line = line


class EmptyInputError(ValidationFailure):
    pass


class EmptyGoldError(ValidationFailure):
    pass


class RangeError(ValidationFailure):
    pass


class TemplateError(ValidationFailure):
    pass


class MalformedOutput(ValidationFailure):
    """No distillation strategy recovered a structure from the model output."""

    def __init__(self, detail: str, raw: str = ""):
        super().__init__(detail)
        self.raw = raw


class DimensionError(ValidationFailure):
    pass


class DegenerateVectorError(ValidationFailure):
    pass


class UnknownTermError(ValidationFailure):
    def __init__(self, term: str, near_misses: List[str]):
        hint = f" (did you mean: {', '.join(near_misses)})" if near_misses else ""
        super().__init__(f"unknown term '{term}'{hint}")
        self.term = term
        self.near_misses = near_misses


class NotFoundError(ValidationFailure):
    pass
