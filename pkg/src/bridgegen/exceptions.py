"""Exception hierarchy shared by every module."""


class BridgeGenError(Exception):
    """Base class for all package errors."""


class ShapeError(BridgeGenError, ValueError):
    """Array dimensions do not agree with what an operation expects."""


class ValidationError(BridgeGenError, ValueError):
    """Invalid argument, configuration or batch."""


class DomainError(ValidationError):
    """Argument outside the mathematical domain (e.g. a non-positive time)."""


class CapacityError(ValidationError):
    """Problem size exceeds a hard cap of an exact solver."""


class NumericError(BridgeGenError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class UnsupportedError(BridgeGenError, NotImplementedError):
    """Operation not defined for the given kind of object."""
