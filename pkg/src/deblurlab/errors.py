"""Exception classes shared across the package."""


class DeblurLabError(Exception):
    """Base class for all package errors."""


class ParameterError(DeblurLabError, ValueError):
    """An operation received an argument outside its domain."""


class ConfigError(DeblurLabError, ValueError):
    """A configuration object, file, or override is invalid."""


class ShapeError(DeblurLabError, ValueError):
    """Array or image shapes are incompatible with an operation."""


class CheckpointError(DeblurLabError, RuntimeError):
    """A checkpoint file is missing, corrupt, or inconsistent."""


class NumericalError(DeblurLabError, RuntimeError):
    """A computation produced a non-finite value."""
