"""Exception taxonomy.

Two families matter for the CLI exit codes: configuration/validation problems
(exit 2) and numerical failures encountered mid-computation (exit 3).
"""


class QFrankError(Exception):
    """Base class for package errors."""


class ConfigurationError(QFrankError):
    """Invalid configuration, spec, geometry or precondition (CLI exit 2)."""


class ValidationFailure(QFrankError):
    """A validator declared the input inadmissible (CLI exit 2)."""


class DomainError(ConfigurationError):
    """Argument outside the mathematical domain of an operation."""


class ResolutionError(ConfigurationError):
    """Interaction range not resolvable on the requested grid."""


class AdmissibilityError(ConfigurationError):
    """Field violates the frozen boundary-data constraint."""


class NumericalError(QFrankError):
    """Iteration failed to converge or stalled (CLI exit 3)."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its budget; carries the final residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StallError(NumericalError):
    """Line search could not find a decreasing step."""
