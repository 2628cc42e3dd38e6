"""Exception hierarchy shared by every sdmd module."""


class SDMDError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(SDMDError, ValueError):
    """Shape, dimension or parameter validation failure."""


class DomainError(SDMDError, ValueError):
    """Input lies outside the mathematical domain of the operation."""


class NotAvailableError(SDMDError, NotImplementedError):
    """Requested quantity is not known for this model or family."""


class UnsupportedFamilyError(NotAvailableError):
    """Dictionary family does not provide the required derivatives."""


class NumericalOverflowError(SDMDError, FloatingPointError):
    """A simulated state became non-finite.

    Attributes
    ----------
    state : ndarray
        The offending (non-finite) state.
    step : int or None
        Integration step at which it appeared, when known.
    """

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class SingularGramError(SDMDError, ArithmeticError):
    """Cholesky factorisation of the regularised Gram matrix failed."""


class InsufficientDataError(SDMDError, ValueError):
    """An estimator was queried where it has no training samples."""


class UndefinedCorrelationError(SDMDError, ValueError):
    """Pearson correlation requested for a zero-variance series."""


class DivergenceError(SDMDError, FloatingPointError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None, learning_rate=None):
        super().__init__(message)
        self.epoch = epoch
        self.learning_rate = learning_rate


class ConfigError(SDMDError, ValueError):
    """Experiment configuration is invalid."""


class InvariantFailure(SDMDError, AssertionError):
    """A preflight invariant check failed."""
