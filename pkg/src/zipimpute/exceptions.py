"""Exception hierarchy shared by the estimation, imputation and I/O layers."""


class ZIPError(Exception):
    """Base class for all package errors."""


class DesignError(ZIPError, ValueError):
    """A design matrix is rank deficient or has no usable columns.

    ``columns`` lists the offending column labels when they are known.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class DataStateError(ZIPError, ValueError):
    """Data is in the wrong state for the requested operation
    (e.g. a missing response handed to a complete-data routine)."""


class ParseError(ZIPError, ValueError):
    """A panel file could not be parsed. ``row`` is 1-based when set."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class TimeStepError(ZIPError):
    """A failure while processing one time point of a panel.

    ``time`` is 1-based; ``original`` is the underlying exception.
    """

    def __init__(self, time, original):
        super().__init__(f"time {time}: {type(original).__name__}: {original}")
        self.time = time
        self.original = original
