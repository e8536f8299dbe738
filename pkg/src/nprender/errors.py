class ValidationError(ValueError):
    """Input data violates a documented contract (shapes, ranges, formats)."""


class NumericalError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""
