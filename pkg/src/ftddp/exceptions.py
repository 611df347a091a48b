"""Exception hierarchy used across the solver."""


class FTDDPError(Exception):
    """Base class for all solver errors."""


class DomainError(FTDDPError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class EvaluationError(FTDDPError, ArithmeticError):
    """A model or cost evaluation produced non-finite values.

    ``index`` names the offending coordinate or knot when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(EvaluationError):
    """Backward or forward integration blew up."""


class BackwardPassError(FTDDPError):
    """The control Hessian could not be regularized to positive definite."""
