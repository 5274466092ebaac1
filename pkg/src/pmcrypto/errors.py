"""Exception hierarchy shared by every stage of the pipeline."""


class PmcryptoError(Exception):
    """Base class for all package errors."""


class DataError(PmcryptoError):
    """Bad or insufficient input data."""


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class OrderingError(DataError):
    pass


class EmptyDataError(DataError):
    pass


class ValidationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DomainError(DataError):
    pass


class SplitError(DataError):
    pass


class ShapeError(PmcryptoError, ValueError):
    pass


class ConfigError(PmcryptoError, ValueError):
    pass


class SubsetError(ConfigError):
    pass


class NumericError(PmcryptoError, ArithmeticError):
    """Training diverged or a linear system could not be solved."""


class UndefinedSharpeError(NumericError):
    pass
