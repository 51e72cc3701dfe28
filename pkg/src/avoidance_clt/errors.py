"""Exception hierarchy shared by every module."""


class AvoidanceError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(AvoidanceError, ValueError):
    pass


class ContractViolationError(AvoidanceError):
    """A caller-supplied function broke its documented contract."""


class EmptyPatternError(AvoidanceError):
    """A nearest-point query was made against a pattern with no points."""


class DegenerateVarianceError(AvoidanceError, ArithmeticError):
    pass


class OutOfRegimeError(AvoidanceError, ValueError):
    """Parameters fall outside the range where a formula is valid."""


class OutOfScopeError(AvoidanceError):
    """The requested quantity is not defined for this model."""
