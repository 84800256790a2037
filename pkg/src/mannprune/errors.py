"""Exception types shared by every module."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value or document is invalid."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""
