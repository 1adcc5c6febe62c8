"""Exception hierarchy shared by all varlp modules."""


class VarlpError(Exception):
    """Base class for all errors raised by varlp."""


class DimensionMismatch(VarlpError, ValueError):
    pass


class ExponentOutOfRange(VarlpError, ValueError):
    pass


class MapOverflow(VarlpError, ArithmeticError):
    """Raised when an inverse modular map leaves the floating-point range."""


class GeometryInvalid(VarlpError, ValueError):
    pass


class PartitionInvalid(VarlpError, ValueError):
    pass


class NoConvergence(VarlpError, RuntimeError):
    pass


class ConfigInvalid(VarlpError, ValueError):
    pass


class SideTooSmall(VarlpError, ValueError):
    pass


class MismatchedLogs(VarlpError, ValueError):
    pass


class FileError(VarlpError, OSError):
    pass


class Divergence(VarlpError, ArithmeticError):
    """Raised when an iterate stops being finite."""
