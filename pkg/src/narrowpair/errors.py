"""Exception hierarchy shared by all modules."""


class NarrowPairError(Exception):
    """Base class for errors raised by this package."""


class DomainError(NarrowPairError, ValueError):
    """An input lies outside the validity range of a model."""


class NoPhaseMatchError(DomainError):
    """No sign change of the phase mismatch inside the search bracket."""


class SearchError(DomainError):
    """A numeric half-maximum or window search failed."""


class FitError(NarrowPairError, RuntimeError):
    """Decay fit could not be performed or did not converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MLEStagnationError(NarrowPairError, RuntimeError):
    """Maximum-likelihood optimizer stopped without converging."""

    def __init__(self, message, best_rho=None, gradient_norm=float("nan")):
        super().__init__(message)
        self.best_rho = best_rho
        self.gradient_norm = gradient_norm


class ConfigError(NarrowPairError, ValueError):
    """Configuration could not be parsed or failed validation."""

    def __init__(self, message, key=None, line=None, column=None):
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column
