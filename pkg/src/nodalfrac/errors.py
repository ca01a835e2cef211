"""Exception hierarchy shared by all modules."""


class NodalFracError(Exception):
    """Base class for all package errors."""


class DomainError(NodalFracError, ValueError):
    """An argument lies outside the domain of a formula or operation."""


class ConfigurationError(NodalFracError, ValueError):
    """Invalid grid, tolerance or run configuration."""


class ToleranceError(NodalFracError, RuntimeError):
    """A quadrature did not reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AssemblyError(NodalFracError, RuntimeError):
    """Failure while assembling or factorising the discrete forms."""


class ConvergenceError(NodalFracError, RuntimeError):
    """An iterative method stagnated or diverged."""


class ProjectionError(NodalFracError, RuntimeError):
    """Projection onto the Nehari or nodal Nehari set failed."""
