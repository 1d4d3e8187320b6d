"""Exception hierarchy shared by every module."""


class SubdiffError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SubdiffError, ValueError):
    """An argument is outside the domain an operation accepts."""


class HorizonError(ParameterError):
    """A requested time exceeds what a simulated path covers."""


class TraceClassError(ParameterError):
    """Covariance eigenvalues are not summable or not positive."""


class KernelError(ParameterError):
    """A covariance kernel produced a Gram matrix that is not PSD."""


class AdaptednessError(ParameterError):
    """An integrand reads information from after its left endpoint."""


class NumericRangeError(SubdiffError, ArithmeticError):
    """A closed-form value does not fit in double precision."""


class ConvergenceError(SubdiffError, ArithmeticError):
    """A series or quadrature did not reach its tolerance within budget."""


class DivergenceError(SubdiffError, ArithmeticError):
    """A numerical solution blew up past the configured threshold."""


class ConfigError(SubdiffError, ValueError):
    """An experiment configuration is invalid."""
