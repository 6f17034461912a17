"""
Exception hierarchy for the LEI edge orchestrator.
Every error raised by the pipeline derives from LeiError.
"""

from typing import Optional


class LeiError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(LeiError):
    """Raised when the pipeline configuration cannot be loaded."""


class MissingFile(LeiError):
    def __init__(self, path, message: Optional[str] = None):
        self.path = str(path)
        super().__init__(message or f"Required file not found: {self.path}")


class ParseError(ConfigError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class InvariantViolation(LeiError):
    def __init__(self, field: str, message: Optional[str] = None):
        self.field = field
        super().__init__(message or f"Invariant violated for '{field}'")


class DomainNotFound(InvariantViolation):
    def __init__(self, data_type: str, message: Optional[str] = None):
        self.data_type = data_type
        super().__init__("data_type", message or f"Domain folder not found for '{data_type}'")


class IoError(LeiError):
    """Wraps OSError raised while reading or writing pipeline artifacts."""


class MalformedCsv(LeiError):
    pass


class MalformedJson(LeiError):
    pass


class HttpError(LeiError):
    pass


class SchemaMismatch(LeiError):
    pass


class EmptyStore(LeiError):
    pass


class ProbeUnavailable(LeiError):
    pass


class EmptySeries(LeiError):
    pass


class EmptyRuns(LeiError):
    pass


class MixedKey(LeiError):
    pass


class FixtureMiss(LeiError):
    pass


class UnresolvedPlaceholder(LeiError):
    def __init__(self, placeholder: str, message: Optional[str] = None):
        self.placeholder = placeholder
        super().__init__(message or f"Template placeholder '{{{placeholder}}}' cannot be resolved")


class StepFailed(LeiError):
    def __init__(self, step: str, reason: str):
        self.step = step
        self.reason = reason
        super().__init__(f"Step {step} failed: {reason}")


class BatchFailed(LeiError):
    pass


class EmptyRecords(LeiError):
    pass


class NoEligibleRuns(LeiError):
    pass


class NoExecutions(LeiError):
    pass
