class VarOrderError(Exception):
    """Base class for package errors."""


class DomainError(VarOrderError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NonStationaryError(DomainError):
    pass


class UsageError(VarOrderError, ValueError):
    """Bad user input: config, files, shapes."""


class InitializationError(VarOrderError, RuntimeError):
    pass


class NumericalError(VarOrderError, ArithmeticError):
    pass
