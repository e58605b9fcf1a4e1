"""Exception hierarchy shared across the package."""


class GCPError(Exception):
    """Base class for errors raised by gcptensor."""


class DomainError(GCPError, ValueError):
    """Data or parameter value outside the domain a loss accepts."""


class FeasibilityError(GCPError, ValueError):
    """Model value or factor entry violates a feasibility bound."""


class CapacityError(GCPError, ValueError):
    """Requested dense materialization exceeds the element budget."""


class NumericalError(GCPError, RuntimeError):
    """Non-finite value encountered where a finite one is required."""


class ParseError(GCPError, ValueError):
    """Malformed input file.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int, optional
        1-based line number in the offending file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
