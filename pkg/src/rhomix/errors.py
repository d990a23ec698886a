"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class BudgetError(RuntimeError):
    """A candidate set would exceed the configured size budget."""

    def __init__(self, required: int, budget: int):
        super().__init__(f"candidate set needs {required} entries, budget is {budget}")
        self.required = required
        self.budget = budget


class SearchError(RuntimeError):
    """The search budget ran out before any full Upsilon evaluation."""


class NumericalError(ArithmeticError):
    """Quadrature (and its Monte Carlo fallback) failed to converge."""


class StudyError(RuntimeError):
    """Too many replications of a simulation study failed."""
