"""Exception hierarchy shared by all modules."""


class CtmcFreshError(Exception):
    """Base class for every error raised by this package."""


class ChainError(CtmcFreshError, ValueError):
    """The supplied rate matrix is not a valid irreducible generator."""


class RowSumViolation(ChainError):
    pass


class NegativeOffDiagonal(ChainError):
    pass


class NotIrreducible(ChainError):
    pass


class NotReversible(ChainError):
    pass


class NegativeTime(CtmcFreshError, ValueError):
    pass


class HorizonRequired(CtmcFreshError, ValueError):
    """A scan horizon cannot be certified and must be given explicitly."""


class NoUniqueMaximum(CtmcFreshError, ValueError):
    pass


class InvalidThresholds(CtmcFreshError, ValueError):
    pass


class MissingAuxStage(CtmcFreshError, ValueError):
    pass


class RandomizedEstimatorUnsupported(CtmcFreshError, TypeError):
    pass


class NonpositiveRate(CtmcFreshError, ValueError):
    pass


class NumericalFailure(CtmcFreshError, ArithmeticError):
    """A linear solve or iteration broke down numerically."""


class SingularResolvent(NumericalFailure):
    pass


class SingularSystem(NumericalFailure):
    pass


class MaxIterationsExceeded(NumericalFailure):
    def __init__(self, message, last_policies=None):
        super().__init__(message)
        self.last_policies = last_policies


class BracketingFailure(NumericalFailure):
    pass


class InfeasibleBounds(CtmcFreshError, ValueError):
    pass


class ConfigError(CtmcFreshError, ValueError):
    """Malformed configuration file or command-line argument."""
