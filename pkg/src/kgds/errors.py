"""Exception types shared across the package."""


class KGError(Exception):
    """Base class for package errors."""


class DomainError(KGError, ValueError):
    """Argument outside the domain where a formula is defined."""


class ConvergenceError(KGError, ArithmeticError):
    """A series or quadrature failed to reach its tolerance."""


class InvalidInputError(KGError, ValueError):
    """Input data violate a documented precondition."""


class NumericalFailure(KGError, ArithmeticError):
    """NaN/Inf or unbounded growth detected during time stepping."""


class ConfigError(KGError, ValueError):
    """Bad configuration document or value."""
