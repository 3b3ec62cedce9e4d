"""Exception types shared across the package."""


class BdRisError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(BdRisError, ValueError):
    """A configuration or argument value is outside its valid domain."""


class ConstraintViolationError(BdRisError, ValueError):
    """A design violates a physical constraint (e.g. passivity of the phase matrix)."""


class DegenerateChannelError(BdRisError, ArithmeticError):
    """A channel realization is (numerically) rank deficient or zero."""


class UnsupportedRegimeError(BdRisError, ValueError):
    """A closed form is requested outside the parameter regime it covers."""


class InfeasibleError(BdRisError):
    """The outage-constrained parameter search has no solution mass."""


class ConsistencyError(BdRisError, RuntimeError):
    """An internal self-check failed; indicates a construction bug."""


class NonFiniteIntegrandError(BdRisError, FloatingPointError):
    """A Monte Carlo integrand returned NaN or infinity."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point
