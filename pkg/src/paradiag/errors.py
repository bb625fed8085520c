"""Exception types raised by the solver library."""


class ParadiagError(Exception):
    """Base class for all library errors."""


class ParameterError(ParadiagError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class SizeError(ParadiagError, ValueError):
    """A dimension (grid size, number of time steps) is too small."""


class OrderUnsupportedError(ParadiagError, ValueError):
    """BDF order outside 1..6."""


class UnsupportedCombinationError(ParadiagError, ValueError):
    """Parameters are individually valid but not together (alpha != 1 with s > 1)."""


class SingularShiftError(ParadiagError, ArithmeticError):
    """A shifted matrix sigma_i I + tau*beta K could not be factorized."""

    def __init__(self, index, shift):
        self.index = index
        self.shift = shift
        super().__init__(f"shifted matrix {index} (sigma={shift:.6g}) is singular")


class ConvergenceError(ParadiagError, RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    ``report`` holds whatever partial diagnostics were available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EstimationError(ConvergenceError):
    """Inverse power iteration did not settle; ``report`` is the last estimate."""


class OracleSizeError(ParadiagError, ValueError):
    """Dense reference construction refused because the problem is too large."""
