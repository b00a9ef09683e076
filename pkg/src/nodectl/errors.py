"""Exception hierarchy shared across the package."""


class NodeCtlError(Exception):
    """Base class for all errors raised by nodectl."""


class DimensionError(NodeCtlError, ValueError):
    """Operands do not share the same ambient dimension."""


class DatasetError(NodeCtlError, ValueError):
    """A dataset violates the pairwise-distinctness requirement."""


class ScheduleError(NodeCtlError, ValueError):
    """A control schedule is malformed (tiling, width, finiteness)."""


class ParameterError(NodeCtlError, ValueError):
    """A numeric parameter is outside its admissible range."""


class UnsupportedRegimeError(NodeCtlError, ValueError):
    """The requested construction does not apply to this (d, N) regime."""


class NumericError(NodeCtlError, ArithmeticError):
    """A numerical sub-procedure failed (bracketing, conditioning, ...)."""


class DivergenceError(NumericError):
    """A trajectory produced a non-finite state."""

    def __init__(self, message, time=None, index=None):
        super().__init__(message)
        self.time = time
        self.index = index


class BracketError(NumericError):
    """A root could not be bracketed within the expansion limit."""


class ConditioningError(NumericError):
    """A construction could not reach an acceptable numerical margin."""


class RoutingError(NumericError):
    """No disjoint family of curves could be routed."""


class ResolutionError(NodeCtlError, ValueError):
    """Too few particles for the requested partition resolution."""


class ParseError(NodeCtlError, ValueError):
    """An input file could not be parsed into a domain object."""
