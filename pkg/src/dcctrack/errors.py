"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) which the command line
prints as ``error_code=<code>`` on stderr.
"""

from __future__ import annotations


class TrackingError(Exception):
    """Base class for all package errors."""

    #: exit status used by the CLI (2 = configuration/validation, 3 = numerical)
    exit_code = 2

    @property
    def code(self) -> str:
        return type(self).__name__


# validation / configuration ------------------------------------------------


class DimensionMismatch(TrackingError):
    pass


class NonFiniteEntry(TrackingError):
    def __init__(self, row: int, col: int):
        super().__init__(f"non-finite entry at row {row}, column {col}")
        self.row = row
        self.col = col


class NonMonotonicDates(TrackingError):
    pass


class DomainError(TrackingError, ValueError):
    pass


class InfeasibleConstraintConfig(TrackingError):
    pass


class InsufficientData(TrackingError):
    pass


class LengthMismatch(TrackingError):
    pass


class ConfigError(TrackingError):
    pass


class ParseError(TrackingError):
    def __init__(self, line: int, column: int, message: str = ""):
        super().__init__(f"line {line}, column {column}: {message}".rstrip(": "))
        self.line = line
        self.column = column


class EmptyFile(TrackingError):
    pass


class UnfixableLeadingGap(TrackingError):
    def __init__(self, ticker: str):
        super().__init__(f"column {ticker!r} has no valid price to start from")
        self.ticker = ticker


class NonPositivePrice(TrackingError):
    def __init__(self, ticker: str, date: str):
        super().__init__(f"non-positive price for {ticker} on {date}")
        self.ticker = ticker
        self.date = date


class IoError(TrackingError):
    def __init__(self, path, message: str = ""):
        super().__init__(f"{path}: {message}" if message else str(path))
        self.path = path


# numerical failures ----------------------------------------------------------


class NumericalFailure(TrackingError):
    exit_code = 3


class SearchFailed(NumericalFailure):
    pass


class AssuranceViolated(NumericalFailure):
    def __init__(self, w, smooth: float, exact: int, k: int):
        super().__init__(
            f"smooth cardinality {smooth:.6g} <= K={k} but exact cardinality is {exact}"
        )
        self.w = w
        self.smooth = smooth
        self.exact = exact
        self.k = k


class MaxIterationsExceeded(NumericalFailure):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class DegenerateProblem(NumericalFailure):
    pass


class AllBelowCutoff(NumericalFailure):
    pass


class CardinalityViolated(NumericalFailure):
    pass


class WindowFailed(NumericalFailure):
    def __init__(self, window: int, cause: TrackingError):
        super().__init__(f"window {window}: {cause}")
        self.window = window
        self.cause = cause
        self.exit_code = cause.exit_code

    @property
    def code(self) -> str:
        return self.cause.code
