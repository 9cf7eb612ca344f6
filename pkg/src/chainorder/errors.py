"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the support of the target."""


class EfficiencyError(RuntimeError):
    """A rejection loop exhausted its attempt budget.

    ``level`` carries the slice level when one was involved and ``step`` the
    chain index when raised from :func:`chainorder.kernels.run_chain`.
    """

    def __init__(self, message, level=None, step=None):
        super().__init__(message)
        self.level = level
        self.step = step


class NumericalError(ArithmeticError):
    """A numerical routine produced an unusable result."""


class ConstructionError(ValueError):
    """A built matrix or representation violates its invariants."""
