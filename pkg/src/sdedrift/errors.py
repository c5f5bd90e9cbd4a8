"""Exception and warning types raised across the package."""


class SdeDriftError(Exception):
    """Base class for all package errors."""


class NotSPD(SdeDriftError, ValueError):
    """A covariance matrix failed the symmetric positive definite check."""


class NonFinite(SdeDriftError, FloatingPointError):
    """A drift evaluation or integration step produced inf or nan."""


class DegenerateDomain(SdeDriftError, ValueError):
    """Observed states have zero extent along some dimension."""


class SingularSystem(SdeDriftError, ArithmeticError):
    """Cholesky factorization of a normal system failed."""


class Diverged(SdeDriftError, FloatingPointError):
    """An iterative optimizer produced a non-finite loss."""


class MissingNoise(SdeDriftError, ValueError):
    """An ensemble has no recorded noise increments to replay."""


class FormatError(SdeDriftError, ValueError):
    """A data, model or config file is malformed."""


class VersionMismatch(FormatError):
    """A model file was written with an unsupported format version."""


class ExpressionError(SdeDriftError, ValueError):
    """Base class for drift-expression parse and evaluation failures."""


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class ZeroTruthNormWarning(UserWarning):
    """The reference drift vanishes on the sample; an absolute error was returned."""


class ZeroDenominatorWarning(UserWarning):
    """Some trajectories have zero norm and were left out of a relative error."""
