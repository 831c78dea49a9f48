"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map an error class to a
distinct process status.
"""


class YieldcastError(Exception):
    exit_code = 1


class ConfigError(YieldcastError):
    exit_code = 2


class SchemaError(YieldcastError, ValueError):
    """Input file or record does not match its documented schema."""

    exit_code = 3

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


ParseError = SchemaError


class DuplicateEntryError(SchemaError):
    pass


class DomainError(YieldcastError, ValueError):
    exit_code = 3


class CalendarLookupError(YieldcastError, LookupError):
    exit_code = 3


class WindowError(YieldcastError, ValueError):
    exit_code = 7


class ContinuityError(WindowError):
    pass


class AssemblyError(YieldcastError):
    """Too many records dropped during assembly."""

    exit_code = 4


class FitError(YieldcastError, ValueError):
    exit_code = 3


class ShapeError(YieldcastError, ValueError):
    exit_code = 3


class StateError(YieldcastError, RuntimeError):
    exit_code = 5


class NumericError(YieldcastError, FloatingPointError):
    exit_code = 5


class TrainingError(YieldcastError, RuntimeError):
    exit_code = 5

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class UndefinedCorrelationError(DomainError):
    pass


class CompatibilityError(YieldcastError):
    exit_code = 6
