"""Exception hierarchy.

Each class carries the process exit code the command-line front end uses
when the error escapes a subcommand.
"""

from __future__ import annotations


class GMCBError(Exception):
    exit_code = 1


class ConfigError(GMCBError, ValueError):
    exit_code = 2


class DataError(GMCBError, ValueError):
    exit_code = 3


class ParameterDomainError(GMCBError, ValueError):
    exit_code = 2


class SamplerError(GMCBError, RuntimeError):
    exit_code = 4


class NotPositiveDefiniteError(SamplerError):
    """Cholesky factorization failed; ``pivot`` is the 1-based failing column."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class SingularSystemError(SamplerError):
    pass


class EstimatorSingularityError(GMCBError, ArithmeticError):
    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class RankError(DataError):
    pass


class IntegrationError(GMCBError, ArithmeticError):
    def __init__(self, message: str, achieved: float = float("nan")):
        super().__init__(message)
        self.achieved = achieved
