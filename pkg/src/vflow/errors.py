"""Exception types shared across the package."""


class VflowError(Exception):
    """Base class for all package errors."""


class ShapeError(VflowError, ValueError):
    pass


class NumericError(VflowError, ArithmeticError):
    pass


class ConfigError(VflowError, ValueError):
    pass


class SolverError(VflowError, RuntimeError):
    pass
