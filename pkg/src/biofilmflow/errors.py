"""Exception types shared across the solver.

The CLI maps these onto exit codes: ConfigError -> 2,
NonConvergenceError (and subclasses) -> 3, InvariantError -> 4.
"""


class ConfigError(ValueError):
    """Bad configuration, unknown key, or invalid parameter combination."""


class NonConvergenceError(RuntimeError):
    """An iterative solve gave up within its iteration budget."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history) if history is not None else []


class StabilityError(NonConvergenceError):
    """An explicit sub-step was run outside its stability range.

    Raised instead of silently sub-stepping; rerun with a smaller dt.
    """


class InvariantError(RuntimeError):
    """A state invariant failed beyond tolerance (bounds, feasibility)."""
