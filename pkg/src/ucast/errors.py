"""Exception taxonomy shared by every module in the package."""


class UcastError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(UcastError, ValueError):
    """Operands have incompatible or malformed dimensions."""


class NumericError(UcastError, ArithmeticError):
    """A numeric contract was violated (non-finite values, asymmetry, ...)."""


class DefinitenessError(NumericError):
    """A factorization hit a non-positive pivot; the matrix is not PD."""


class MissingGradientError(UcastError, RuntimeError):
    """A gradient was requested for a parameter the tape never saw."""


class ConvergenceError(UcastError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class DivergenceError(UcastError, RuntimeError):
    """Training produced a non-finite loss."""


class ParameterError(UcastError, ValueError):
    """A configuration value is outside its legal range."""


class DataError(UcastError, ValueError):
    """A dataset violates a data contract (too short, all-NaN channel, ...)."""


class FormatError(UcastError, ValueError):
    """A file cannot be parsed (ragged rows, bad header, bad manifest)."""
