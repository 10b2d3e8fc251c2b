"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand extents do not agree."""


class ValidationError(ValueError):
    """A configuration or input violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite or degenerate values."""


class CheckpointError(RuntimeError):
    """A checkpoint cannot be loaded for the requested configuration."""
