"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GeometryError(ShapeError):
    """Spatial geometry is invalid (empty output, non-divisible partition, odd dims)."""


class ContractError(ValueError):
    """A call violated a documented precondition."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown or inconsistent."""


class DataFormatError(ValueError):
    """A dataset file does not match its binary layout."""


class NumericError(FloatingPointError):
    """Training produced non-finite values."""
