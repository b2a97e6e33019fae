"""Exception hierarchy shared across the package."""


class ConcordiaError(Exception):
    """Base class for all package errors."""


class DataValidationError(ConcordiaError, ValueError):
    """Invalid input data. ``row`` is the 1-based data row when known."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SchemaError(DataValidationError):
    """A required column is missing from the input file."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class EmptyDataError(DataValidationError):
    pass


class EmptyGridError(DataValidationError):
    pass


class FitError(ConcordiaError):
    """A working model could not be fitted."""


class ConvergenceError(FitError):
    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class MonotoneLikelihoodError(FitError):
    pass


class CollinearityError(FitError):
    pass


class BandwidthError(FitError):
    pass


class UnstableWeightsError(FitError):
    def __init__(self, message, fraction=None):
        super().__init__(message)
        self.fraction = fraction


class DegenerateEstimandError(ConcordiaError):
    """The target measure is undefined on this sample (e.g. no events by tau)."""
