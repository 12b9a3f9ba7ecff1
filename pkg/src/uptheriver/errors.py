"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AllocationError(ValueError):
    """A drift allocation violates the budget/support contract."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance.

    The achieved absolute-error estimate is attached as ``achieved_tol``.
    """

    def __init__(self, message: str, achieved_tol: float):
        super().__init__(f"{message} (achieved tolerance {achieved_tol:.3e})")
        self.achieved_tol = achieved_tol


class SolverError(RuntimeError):
    """The moving-boundary solver could not produce a valid step."""


class CapabilityError(RuntimeError):
    """A record lacks the data needed for the requested computation."""
