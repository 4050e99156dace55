"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every failure raised by the
numerical modules belongs to one of the three families below.
"""


class SeqGPError(Exception):
    exit_code = 1


class ConfigError(SeqGPError, ValueError):
    exit_code = 2


class NumericalError(SeqGPError, ArithmeticError):
    exit_code = 3


class SingularCovarianceError(NumericalError):
    """A data covariance could not be factored, even after jitter."""

    def __init__(self, message: str, rank: int | None = None, size: int | None = None):
        if rank is not None and size is not None:
            message = f"{message} (estimated rank {rank} of {size})"
        super().__init__(message)
        self.rank = rank
        self.size = size


class MemoryBudgetError(SeqGPError, MemoryError):
    exit_code = 4
