"""Exception hierarchy shared by every module."""


class PderegError(Exception):
    """Base class for all package errors."""


class DomainError(PderegError, ValueError):
    """Invalid input: wrong domain, shape, range or configuration."""


class CapacityError(PderegError, ValueError):
    """A dense computation would exceed the configured size budget."""


class NumericalError(PderegError, RuntimeError):
    """Base class for failures of a numerical procedure."""


class SolverError(NumericalError):
    """A linear solve failed or missed its residual tolerance."""


class OptimizationError(NumericalError):
    """Every optimizer restart diverged."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class DegeneracyError(NumericalError):
    """A pointwise division met values below the configured floor."""

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = list(nodes or [])
