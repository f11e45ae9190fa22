"""Exception hierarchy shared across the package."""


class PLSIMError(Exception):
    """Base class for all package errors."""


class ValidationError(PLSIMError, ValueError):
    """Invalid input data or configuration."""


class NumericalError(PLSIMError, ArithmeticError):
    """A numerical procedure failed or produced unusable values."""


class NormViolation(ValidationError):
    pass


class InactiveNonzero(ValidationError):
    pass


class NegativeInput(ValidationError):
    pass


class InvalidDF(ValidationError):
    pass


class UnknownScenario(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ConstantColumn(ValidationError):
    pass


class SingularLocalFit(NumericalError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class GradientOverflow(NumericalError):
    pass


class AllFoldsSingular(NumericalError):
    pass


class MaxItersExceeded(NumericalError):
    pass


class InitFailure(NumericalError):
    pass


class AllFitsFailed(NumericalError):
    pass


class SingularPhi(NumericalError):
    pass


class GNDiverged(NumericalError):
    pass


class ZeroVarianceEstimate(NumericalError):
    pass
