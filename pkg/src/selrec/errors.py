"""Exception hierarchy.

Every error raised on purpose by the package derives from ``SelrecError`` so
callers (the CLI in particular) can catch the whole family at once.
"""


class SelrecError(Exception):
    """Base class for all package errors."""


# -- ingestion / data model ------------------------------------------------


class PoolError(SelrecError, ValueError):
    pass


class EmptyFile(PoolError):
    pass


class MissingColumn(PoolError):
    pass


class NonNumericCell(PoolError):
    def __init__(self, row, col, value, path=None):
        self.row, self.col, self.value, self.path = row, col, value, path
        where = f"{path}:{row}" if path else f"line {row}"
        super().__init__(f"{where}: column {col!r} has non-numeric value {value!r}")


class InvalidBinaryValue(PoolError):
    def __init__(self, row, col, value, path=None):
        self.row, self.col, self.value, self.path = row, col, value, path
        where = f"{path}:{row}" if path else f"line {row}"
        super().__init__(f"{where}: binary column {col!r} must be -1 or 1, got {value!r}")


class DegenerateCovariate(PoolError):
    pass


class SpecMismatch(PoolError):
    pass


# -- density -----------------------------------------------------------------


class DegenerateSample(SelrecError, ValueError):
    pass


# -- recruitment -------------------------------------------------------------


class LengthMismatch(SelrecError, ValueError):
    pass


class TooManyStrata(SelrecError, ValueError):
    pass


class InfeasibleCohort(SelrecError, ValueError):
    pass


# -- model fitting -----------------------------------------------------------


class FitError(SelrecError, ArithmeticError):
    """A maximum-likelihood fit failed; the Monte-Carlo harness counts these."""


class InvalidModelInput(FitError, ValueError):
    pass


class SeparationDetected(FitError):
    pass


class MonotoneLikelihood(FitError):
    pass


class SingularInformation(FitError):
    pass


class DidNotConverge(FitError):
    pass


class NoEvents(FitError):
    pass


class UnconvergedModel(SelrecError, ValueError):
    pass


# -- simulation --------------------------------------------------------------


class InvalidConfig(SelrecError, ValueError):
    pass


class DimensionMismatch(SelrecError, ValueError):
    pass


class ExcessiveFitFailures(SelrecError, RuntimeError):
    pass
