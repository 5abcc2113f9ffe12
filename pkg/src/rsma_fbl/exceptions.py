"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class SingularParameterError(ValueError):
    """Parameter combination at (or too close to) a removable singularity."""


class ConditioningError(ArithmeticError):
    """Linear algebra failed due to an ill-conditioned matrix."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ConvergenceError(ArithmeticError):
    """An iterative routine exceeded its iteration budget."""


class BudgetExceededError(RuntimeError):
    """An exhaustive search would exceed the configured point budget."""


class ConfigError(ValueError):
    """Invalid or malformed scenario configuration."""
