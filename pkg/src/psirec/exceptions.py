class PsirecError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(PsirecError, ValueError):
    """Operands have incompatible shapes."""


class DataError(PsirecError):
    """Input data is unreadable, empty, or inconsistent."""


class NumericalError(PsirecError):
    """A factorization produced non-finite or otherwise unusable output."""
