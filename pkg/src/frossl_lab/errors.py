"""Exception types shared across the package."""


class FrosslError(Exception):
    """Base class for all errors raised by frossl_lab."""


class DimensionError(FrosslError, ValueError):
    """Empty or mis-shaped input."""


class ShapeError(DimensionError):
    """Operands whose shapes do not fit the operation."""


class ParameterError(FrosslError, ValueError):
    """A scalar parameter outside its admissible range."""


class DegenerateInputError(FrosslError, ValueError):
    """A normalization statistic is zero, i.e. the input has collapsed.

    ``axis`` is ``"column"``, ``"row"``, ``"matrix"`` or ``"view"`` and
    ``index`` locates the offending slice (``None`` for whole-matrix stats).
    """

    def __init__(self, message, axis=None, index=None):
        super().__init__(message)
        self.axis = axis
        self.index = index


class DomainError(FrosslError, ValueError):
    """Cholesky factorization failed; ``pivot`` is the 0-based failing pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class FormatError(FrosslError, ValueError):
    """A binary or text file does not follow its declared format."""


class ConsistencyError(FrosslError, ValueError):
    """Two related inputs disagree (e.g. image and label counts)."""


class TruncatedFileError(FrosslError, OSError):
    """A binary file ended before its header said it would."""

    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NumericalAbort(FrosslError, ArithmeticError):
    """Training produced a non-finite value."""

    def __init__(self, message, step=None, term=None):
        super().__init__(message)
        self.step = step
        self.term = term
