"""Exception hierarchy shared by all solvers."""


class NonAsymMFError(Exception):
    """Base class for library errors."""


class DomainError(NonAsymMFError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class DegenerateGameError(DomainError):
    """The game has too few players for the requested quantity."""


class NonFiniteEvaluation(NonAsymMFError, ArithmeticError):
    """A payoff or model evaluation produced NaN or inf."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class StepSizeError(NonAsymMFError, ArithmeticError):
    """A finite-difference or integration step failed numerically."""


class InstabilityError(DomainError):
    """Queue parameters violate the stability condition rho < 1."""


class SingularityError(NonAsymMFError, ArithmeticError):
    """An ODE right-hand side was evaluated at a singular point."""


class ConvergenceError(NonAsymMFError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``result`` carries the best iterate so callers can still write it out.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
