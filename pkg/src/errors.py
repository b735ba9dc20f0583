"""Exception hierarchy shared by the library, the CLI and the API.

Each class carries the process exit code the CLI reports for it.
"""
from __future__ import annotations


class ArbitrageError(Exception):
    """Base class; anything not more specific is an internal failure."""

    exit_code = 3


class UsageError(ArbitrageError):
    exit_code = 1


class DataError(ArbitrageError, ValueError):
    """Input data is malformed, inconsistent or insufficient."""

    exit_code = 2


class InvalidRecordError(DataError):
    pass


class LogParseError(DataError):
    def __init__(self, path: str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class UnitMismatchError(DataError):
    pass


class DegenerateCostError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class ProviderNotFoundError(DataError):
    pass


class ProblemNotFoundError(DataError):
    pass


class OutOfSupportError(DataError):
    """pass@k requested beyond the observed number of attempts."""


class EmptyRangeError(DataError):
    pass


class EmptySampleError(DataError):
    pass


class OverlappingSplitError(DataError):
    pass
