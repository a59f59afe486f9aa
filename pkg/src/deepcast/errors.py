"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every failure a user can cause
should surface as one of them.
"""


class DeepcastError(Exception):
    """Base class for all package errors."""


class DimensionError(DeepcastError, ValueError):
    """Operand shapes do not conform."""


class ConfigError(DeepcastError, ValueError):
    """Invalid hyperparameter or configuration value."""


class ContractError(DeepcastError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(DeepcastError, ArithmeticError):
    """Non-finite values or a division by zero."""


class DataError(DeepcastError):
    """Base class for dataset ingestion problems."""


class SchemaError(DataError, ValueError):
    """A record is missing a field or a field fails to parse."""


class IntegrityError(DataError, ValueError):
    """Dates are duplicated, out of order or have gaps."""


class DivergedError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss
