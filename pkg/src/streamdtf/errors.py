"""Exception types shared across the package."""


class ParseError(ValueError):
    """A text input (COO file, index list) could not be parsed."""


class BoundsError(IndexError):
    """An entry index lies outside the tensor shape."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or degenerate intermediate."""


class CheckpointError(ValueError):
    """A checkpoint document is missing, truncated, or has the wrong schema."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class OracleError(RuntimeError):
    """A verification oracle failed to converge to its own tolerance."""
