"""Exception hierarchy shared by every solver module."""


class ProbStructError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ProbStructError, ValueError):
    """Raised when inputs violate a documented precondition."""


class DegenerateGeometryError(ProbStructError, ArithmeticError):
    """Raised when two points coincide and the distance Jacobian is undefined."""


class NumericalFailureError(ProbStructError, ArithmeticError):
    """Raised when an innovation matrix cannot be factorized."""

    def __init__(self, message, *, cycle=None, batch=None):
        self.cycle = cycle
        self.batch = batch
        context = []
        if cycle is not None:
            context.append(f"cycle {cycle}")
        if batch is not None:
            context.append(f"batch {batch}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class AlignmentError(ProbStructError, ValueError):
    """Raised when a superposition is requested for a degenerate point set."""


class GenerationError(ProbStructError, RuntimeError):
    """Raised when a synthetic structure cannot be built within the attempt budget."""
