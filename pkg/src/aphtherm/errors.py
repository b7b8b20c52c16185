"""Exception hierarchy for the toolkit.

Grouped by failure class so the CLI can map them onto stable exit codes:
validation errors (bad inputs, out-of-range conditions, malformed tables),
numerical errors (NaN/Inf, solver divergence), and training errors.
"""


class AphthermError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(AphthermError, ValueError):
    """Invalid argument, configuration, or input data."""


class EnvelopeError(ValidationError):
    """Operating condition outside (or too far outside) the design box."""


class TaskTableError(ValidationError):
    """Malformed task-table CSV; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class DesignSizeError(ValidationError):
    """Requested design size that cannot be generated."""


class NumericalError(AphthermError, ArithmeticError):
    """Non-finite values or other numerical breakdown."""


class DivergenceError(NumericalError):
    """Iteration hit its cap without meeting tolerance.

    ``residual`` holds the last convergence measure so callers can tell a
    near miss from a blow-up.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingError(AphthermError):
    """Optimization failed; ``last_state`` holds the last finite weights."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class BankBuildError(TrainingError):
    """One or more bank tasks failed to train.

    ``partial`` is the bank of tasks that did succeed; ``failures`` lists
    ``(condition, exception)`` pairs for the rest.
    """

    def __init__(self, message, partial=None, failures=None):
        super().__init__(message)
        self.partial = partial
        self.failures = failures or []
