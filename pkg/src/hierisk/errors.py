"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class HieriskError(Exception):
    """Base class for every error raised by the package."""


class ExprError(HieriskError):
    """Problem with an expression (syntax, identifiers, evaluation)."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    pass


class ArityError(ExprError):
    pass


class UnboundVariableError(ExprError):
    pass


class ExprDomainError(ExprError):
    """Division by zero, log of a non-positive value, etc.

    ``index`` is the flat position of the first offending element when the
    expression was evaluated on arrays, otherwise ``None``.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SpecError(HieriskError):
    """Invalid or incomplete problem configuration."""


class InadmissibleSpecError(SpecError):
    """Raised by solver entry points when validation reported violations."""


class NonFiniteStateError(HieriskError):
    def __init__(self, path: int, step: int):
        super().__init__(f"non-finite state on path {path} at step {step}")
        self.path = path
        self.step = step


class RegressionError(HieriskError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class PreconditionError(HieriskError):
    pass


class StabilityError(PreconditionError):
    """Explicit time stepping would violate its stability/monotonicity bound."""


class LatticeError(HieriskError):
    """The recombining tree cannot represent the requested dynamics."""


class NonFiniteValueError(HieriskError):
    """A grid update produced NaN or infinity."""
