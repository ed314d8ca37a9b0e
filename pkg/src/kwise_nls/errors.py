"""Exception types raised by the solvers."""


class InvalidArgumentError(ValueError):
    """A precondition on an argument was violated."""


class InvalidStateError(ValueError):
    """A state is outside the set an operation is defined on."""


class NotProjectableError(ArithmeticError):
    """No scaling places the state on the requested constraint set."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleStartError(NotProjectableError):
    """None of the initial states could be placed on the constraint set."""
