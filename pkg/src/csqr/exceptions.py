"""Exception hierarchy shared by the library and the command line."""


class CsqrError(Exception):
    """Base class for all errors raised by csqr."""

    exit_code = 1


class ConfigurationError(CsqrError, ValueError):
    """An invalid hyperparameter or structural configuration."""

    exit_code = 2


class ShapeError(CsqrError, ValueError):
    """Array dimensions do not match what the model expects."""

    exit_code = 3


class SchemaError(CsqrError, ValueError):
    """A data file is missing a column or has a non-numeric one."""

    exit_code = 3

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class CompatibilityError(CsqrError, ValueError):
    """A model file and a dataset (or file version) do not fit together."""

    exit_code = 3


class InsufficientDataError(CsqrError, ValueError):
    exit_code = 3


class UnsupportedOperationError(CsqrError):
    """Requested an operation that needs data we do not have (e.g. oracle columns)."""

    exit_code = 3


class NumericError(CsqrError, ArithmeticError):
    exit_code = 4


class DivergedTrainingError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
