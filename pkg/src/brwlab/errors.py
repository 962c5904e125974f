"""Exception types shared across the package."""


class BrwError(Exception):
    """Base class for all package errors."""


# offspring / tree sampling
class NotCritical(BrwError):
    pass


class DegenerateVariance(BrwError):
    pass


class NegativeProbability(BrwError):
    pass


class NotNormalized(BrwError):
    pass


class ImpossibleConditioning(BrwError):
    pass


class InvalidHeight(BrwError):
    pass


# step distributions / embedding
class NotSymmetric(BrwError):
    pass


class DegenerateSupport(BrwError):
    pass


class ParityMismatch(BrwError):
    pass


class AttemptsExhausted(BrwError):
    def __init__(self, msg, acceptance_estimate=None):
        super().__init__(msg)
        self.acceptance_estimate = acceptance_estimate


class NotDescendant(BrwError):
    pass


# resistance
class Disconnected(BrwError):
    pass


class NotConverged(BrwError):
    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class TooLarge(BrwError):
    pass


# events / config
class ConfigInvalid(BrwError):
    pass


class NonPositiveValue(BrwError):
    pass


class ParseError(BrwError):
    def __init__(self, msg, line=None):
        super().__init__(msg)
        self.line = line


class ValidationError(BrwError):
    pass
