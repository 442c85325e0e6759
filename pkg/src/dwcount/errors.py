"""Exception hierarchy.

Data problems and numerical failures are kept apart so the command line can
map them to distinct exit codes.
"""


class DWCountError(Exception):
    """Base class for all package errors."""


class DataError(DWCountError, ValueError):
    """Input data is malformed or violates a model precondition."""


class RankDeficiencyError(DataError):
    def __init__(self, dependent_columns):
        self.dependent_columns = list(dependent_columns)
        super().__init__(
            "design matrix is rank deficient; linearly dependent column(s): "
            + ", ".join(self.dependent_columns)
        )


class NumericalError(DWCountError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class TruncationError(NumericalError):
    """An infinite series did not fall below tolerance within the term cap."""


class ConvergenceError(NumericalError):
    def __init__(self, message, iterations=None):
        self.iterations = iterations
        if iterations is not None:
            message = f"{message} (after {iterations} iterations)"
        super().__init__(message)


class DegenerateLikelihoodError(NumericalError):
    """Some observation has probability that underflows to zero."""

    def __init__(self, message, index=None, value=None):
        self.index = index
        self.value = value
        super().__init__(message)


class BoundaryError(NumericalError):
    """The likelihood is maximised on the boundary of the parameter space."""
