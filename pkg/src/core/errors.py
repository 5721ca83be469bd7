"""
Exceptions for the occupancy flow decomposition toolkit.
Each exception carries the process exit code the CLI reports for it.
"""

from typing import List, Optional


class OccuflowError(Exception):
    """Base class for all errors raised by occuflow."""

    exit_code = 1


# User and data errors (exit code 1)


class PanelSchemaError(OccuflowError, ValueError):
    """Input file does not match the configured ingestion schema."""


class MissingDayError(OccuflowError, ValueError):
    """A district has a gap in its daily date sequence."""


class NegativeOccupancyError(OccuflowError, ValueError):
    """An occupancy count is negative."""


class DuplicateCellError(OccuflowError, ValueError):
    """Two rows were given for the same (date, district) cell."""


class PanelTooShortError(OccuflowError, ValueError):
    """A panel needs at least two days to be differenced."""


class UnknownCovariateError(OccuflowError, ValueError):
    """A requested covariate is not present in the panel."""


class NonPositiveLogInputError(OccuflowError, ValueError):
    """A log-transformed covariate received a non-positive value."""


class UnmappedDistrictError(OccuflowError, ValueError):
    """A district has no entry in the region map."""


class InsufficientKnotsError(OccuflowError, ValueError):
    """A smooth basis was requested with too few basis functions."""


class DimensionMismatchError(OccuflowError, ValueError):
    """Array shapes are incompatible."""


class EmptySupportError(OccuflowError, ValueError):
    """The truncation bound leaves no admissible inflow value."""


class WindowTooShortError(OccuflowError, ValueError):
    """A summary window is shorter than two iterations or exceeds the trace."""


class ConfigError(OccuflowError, ValueError):
    """Configuration file or flags are invalid."""


class TraceFormatError(OccuflowError, ValueError):
    """A stored trace cannot be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


# Numerical errors (exit code 2)


class NumericalError(OccuflowError):
    """Base class for numerical failures."""

    exit_code = 2


class NonconvergenceError(NumericalError):
    """An iterative fitter hit its iteration cap (includes separation)."""


class SingularInformationError(NumericalError):
    """The (penalized) information matrix cannot be factorized."""


class ZeroRateError(NumericalError):
    """An outflow rate is exactly zero while outflows are positive."""


class InfeasibleProblemError(NumericalError):
    """A quadratic program has an empty feasible region."""


class NumericalFailureError(NumericalError):
    """A solver produced non-finite values."""


class SemAbortedError(NumericalError):
    """The stochastic EM stopped after repeated fitter failures."""

    def __init__(self, message: str, records: Optional[List] = None):
        super().__init__(message)
        self.records = records or []
