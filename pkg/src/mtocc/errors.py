"""Exception hierarchy.

The CLI maps each family to a stable exit code: validation errors exit 1,
numerical/training errors exit 2 and persistence/I-O errors exit 3.
"""


class MTOCError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(MTOCError, ValueError):
    """Malformed or inconsistent input (shapes, non-finite values, ids)."""


class ParameterError(InputError):
    """Hyperparameter outside its admissible range."""


class SchemaError(InputError):
    """Dataset file lacks a required column."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EvaluationError(InputError):
    """Metric cannot be evaluated, e.g. labels from a single class."""


class StateError(InputError):
    """Second-layer state used while inconsistent with (A, theta)."""


class NumericalError(MTOCError, ArithmeticError):
    exit_code = 2

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class DegenerateDataError(NumericalError):
    pass


class TrainingError(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class PersistenceError(MTOCError, OSError):
    exit_code = 3


class CorruptionError(PersistenceError):
    pass


class MigrationError(PersistenceError):
    def __init__(self, found, expected):
        super().__init__(
            f"model file format version {found} cannot be read by this "
            f"version of the library (expects version {expected})"
        )
        self.found = found
        self.expected = expected
