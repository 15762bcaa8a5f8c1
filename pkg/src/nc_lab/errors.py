"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An argument is outside the operation's mathematical domain."""


class NumericError(ArithmeticError):
    """A computation cannot be carried out in finite floating point."""


class BudgetExceededError(RuntimeError):
    """An iterative procedure hit its step budget before terminating.

    Carries the partial trajectory produced so far in ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory if trajectory is not None else []
