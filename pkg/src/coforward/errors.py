"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: data and parameter
validation problems (2) and numerical failures (3). IO problems are left as plain ``OSError`` (exit 1).
"""


class CoforwardError(Exception):
    exit_code = 3


class DataError(CoforwardError, ValueError):
    exit_code = 2


class FormatError(DataError):
    pass


class NoDataError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class NotFoundError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InsufficientDataError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class ParameterError(CoforwardError, ValueError):
    exit_code = 2


class DimensionError(ParameterError):
    pass


class NumericalError(CoforwardError, ArithmeticError):
    exit_code = 3


class SingularMatrixError(NumericalError):
    pass


class NotPSDError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class StageError(CoforwardError):
    """Wraps an error raised inside one calibration stage."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
