"""Exception hierarchy shared by the solver, diagnostics and CLI."""


class PJKOError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PJKOError, ValueError):
    pass


class NonConvexEnergy(PJKOError, ValueError):
    pass


class DivergenceError(PJKOError, ArithmeticError):
    pass


class PreconditionError(PJKOError, ValueError):
    pass


class ShapeMismatch(PJKOError, ValueError):
    pass


class SizeError(PJKOError, ValueError):
    pass


class RangeError(PJKOError, ValueError):
    pass


class MaxIterations(PJKOError, RuntimeError):
    """Inner solver hit its iteration cap; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class LineSearchStall(PJKOError, RuntimeError):
    pass


class StiffnessError(PJKOError, RuntimeError):
    pass


class MismatchError(PJKOError, ValueError):
    pass


class IncompleteTrajectory(PJKOError, ValueError):
    pass


class ConfigError(PJKOError, ValueError):
    pass
