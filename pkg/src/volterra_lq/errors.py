"""Exception hierarchy shared by the solvers and the command-line front end."""


class VolterraLQError(Exception):
    """Base class for all package errors."""


class SpecError(VolterraLQError, ValueError):
    """Malformed problem data: shapes, domains, arguments."""


class DomainError(SpecError):
    """Kernel evaluated outside the lower triangle t0 <= tau <= s <= T."""


class H4ViolationError(VolterraLQError):
    """Weights fail the standard positivity condition.

    ``report`` carries the full :class:`~volterra_lq.model.ValidationReport`.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RegularityError(VolterraLQError):
    """The reduced control weight lost positive definiteness at some step."""

    def __init__(self, message, step=None, min_eig=None):
        super().__init__(message)
        self.step = step
        self.min_eig = min_eig


class ConvergenceError(VolterraLQError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class ConvexityError(VolterraLQError):
    """The adapted-control quadratic form is not positive definite."""


class SimulationError(VolterraLQError):
    """Non-finite values encountered while propagating a path."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step
