"""Exception types shared across the package."""


class LyapcoError(Exception):
    """Base class for all package-specific errors."""


class ContractViolationError(LyapcoError, ValueError):
    """An argument violated a documented precondition (shape, range, ...)."""


class NumericalDomainError(LyapcoError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class ConvergenceError(LyapcoError, RuntimeError):
    """An iterative routine exhausted its budget.  Carries the residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SimulationBlowupError(LyapcoError, RuntimeError):
    """A rollout produced a non-finite or absurdly large state."""

    def __init__(self, message, step_index):
        super().__init__(message)
        self.step_index = step_index


class UnsupportedEstimatorError(LyapcoError, ValueError):
    """The requested estimator cannot handle the given Jacobians."""


class OptimizationFailureError(LyapcoError, RuntimeError):
    """Every optimization iterate failed.  Carries the partial history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class ConfigError(LyapcoError, ValueError):
    """Invalid experiment configuration.  Message names the offending key."""
