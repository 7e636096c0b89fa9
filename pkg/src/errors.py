class HypradError(Exception):
    """Base class for toolkit errors"""


class ConfigError(HypradError, ValueError):
    """Invalid run configuration; the message names the field"""


class DomainError(HypradError, ValueError):
    """A point or parameter lies outside the region where an operation is defined"""


class ProjectionError(HypradError):
    """Nearest-point projection did not converge"""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class SolverError(HypradError):
    """Nonlinear or linear solve failed"""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class InvariantViolation(SolverError):
    """A monotonicity invariant of a solve sequence failed"""
