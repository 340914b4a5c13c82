"""Exception types shared across the package."""


class BlockNewtonError(Exception):
    """Base class for all package errors."""


class DimensionError(BlockNewtonError, ValueError):
    """Shapes of inputs do not chain or match."""


class ConfigError(BlockNewtonError, ValueError):
    """Invalid configuration value (bad gamma, damping, grid, ...)."""


class NumericalBreakdownError(BlockNewtonError, ArithmeticError):
    """A numerical routine produced NaN/Inf or an impossible state."""


class TrainingDivergedError(NumericalBreakdownError):
    """Training loss became non-finite."""
