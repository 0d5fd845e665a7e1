"""Exception types shared across the package."""


class HyperPruneError(Exception):
    """Base class for all package errors."""


class DimensionError(HyperPruneError, ValueError):
    """Operand shapes are incompatible."""


class ShapeError(HyperPruneError, ValueError):
    """A spatial size does not come out as a positive integer."""


class DomainError(HyperPruneError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(HyperPruneError, FloatingPointError):
    """A NaN or Inf appeared in a computed tensor."""


class StateError(HyperPruneError, RuntimeError):
    """An operation was invoked in the wrong lifecycle state."""


class ArgumentError(HyperPruneError, ValueError):
    """Invalid scalar or enumerated argument."""
