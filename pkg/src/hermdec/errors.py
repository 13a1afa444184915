"""Exception hierarchy shared by all modules."""


class DECError(Exception):
    """Base class for all library errors."""


class DegenerateSimplexError(DECError, ValueError):
    pass


class EmptyComplexError(DECError, ValueError):
    pass


class DegreeError(DECError, ValueError):
    pass


class DegenerateGridError(DECError, ValueError):
    pass


class AxisError(DECError, ValueError):
    pass


class SamplingSaturationError(DECError, RuntimeError):
    """Random sampling could not place a point at the requested separation."""


class DegenerateInputError(DECError, ValueError):
    pass


class SingularHodgeError(DECError, ArithmeticError):
    """A Hodge star has zero diagonal entries and cannot be inverted.

    The offending simplex ranks are kept on ``self.simplices``.
    """

    def __init__(self, degree, simplices):
        self.degree = degree
        self.simplices = list(simplices)
        shown = ", ".join(str(s) for s in self.simplices[:10])
        more = "" if len(self.simplices) <= 10 else f" (+{len(self.simplices) - 10} more)"
        super().__init__(
            f"Hodge star of degree {degree} has zero dual volume on simplices "
            f"[{shown}]{more}; use a regularized metric (epsilon > 0)"
        )


class AssemblyError(DECError, ValueError):
    pass


class AllBoundaryError(DECError, ValueError):
    """Dirichlet masking removed every degree of freedom."""


class UnderdeterminedError(DECError, ValueError):
    pass


class ConvergenceError(DECError, RuntimeError):
    """The eigensolver did not reach the requested residual."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals
