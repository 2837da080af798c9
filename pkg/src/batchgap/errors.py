"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``code`` and the process exit
code the CLI maps it to (2 = config/data error, 3 = internal invariant).
"""

from __future__ import annotations


class BatchGapError(Exception):
    code = "error"
    exit_code = 2


class InvalidSpecError(BatchGapError, ValueError):
    code = "invalid-spec"


class InvalidWorkloadError(BatchGapError, ValueError):
    code = "invalid-workload"


class PresetNotFoundError(BatchGapError, KeyError):
    code = "not-found"

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ConfigError(BatchGapError, ValueError):
    code = "config-error"


class UndefinedIntensityError(BatchGapError, ZeroDivisionError):
    code = "undefined-intensity"


class EmptyBatchError(BatchGapError, ValueError):
    code = "empty-batch"


class InsufficientMemoryError(BatchGapError):
    code = "insufficient-memory"


class DuplicateRequestError(BatchGapError, KeyError):
    code = "duplicate-request"


class RequestNotFoundError(BatchGapError, KeyError):
    code = "not-found"


class StallDetectedError(BatchGapError, RuntimeError):
    code = "stall-detected"


class CurveIncompleteError(BatchGapError, ValueError):
    code = "curve-incomplete"


class MalformedCurveError(BatchGapError, ValueError):
    code = "malformed-curve"


class CurveParseError(BatchGapError, ValueError):
    code = "parse-error"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InvalidEpsilonError(BatchGapError, ValueError):
    code = "invalid-epsilon"


class InvalidSLOError(BatchGapError, ValueError):
    code = "invalid-slo"


class InsufficientDataError(BatchGapError, ValueError):
    code = "insufficient-data"


class InvariantViolation(BatchGapError, AssertionError):
    code = "invariant-violation"
    exit_code = 3
