"""Exception types shared across the package.

Numeric failures derive from :class:`NumericError` so that callers (and the
CLI's exit-code mapping) can catch them as a group.
"""

from __future__ import annotations


class NumericError(ArithmeticError):
    """A computation could not produce a trustworthy number."""


class BracketFailure(NumericError):
    """Grid maximum sits on the search interval's edge; widen and retry."""


class NoInteriorMaximum(NumericError):
    pass


class OverflowGuard(NumericError):
    """Exponent of a tilted quantity exceeds the 700 guard."""


class NonFiniteIntegrand(NumericError):
    pass


class SingularMatrix(NumericError):
    pass


class EmptyZeroSet(NumericError):
    pass


class ParameterOutOfRange(NumericError):
    pass


class DidNotConverge(NumericError):
    """Iterative solver hit its iteration cap.

    The last iterate is kept on ``solution`` so callers can still report it.
    """

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class UnknownIdentifier(ValueError):
    """A named rule, model or loss is not recognised."""
