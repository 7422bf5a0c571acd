"""Exception types shared across the toolkit."""


class CtrlkitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CtrlkitError, ValueError):
    """Inputs have inconsistent or unexpected dimensions."""


class NonFiniteError(CtrlkitError, ArithmeticError):
    """An evaluation produced NaN or infinity.

    ``index`` identifies the offending output component when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ParseError(CtrlkitError, ValueError):
    """Model text could not be parsed; carries line/column info."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ConvergenceError(CtrlkitError, ArithmeticError):
    """An iterative solver failed to meet its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularBlockError(CtrlkitError, ArithmeticError):
    """A block Jacobian (or KKT system) is numerically singular."""


class StructuralSingularityError(CtrlkitError):
    """Index reduction could not complete a maximum matching."""

    def __init__(self, message, unmatched=()):
        super().__init__(message)
        self.unmatched = tuple(unmatched)


class RankDeficiencyError(CtrlkitError, ValueError):
    """A regression feature matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConditioningError(CtrlkitError, ArithmeticError):
    """A matrix that must be positive definite is not."""
