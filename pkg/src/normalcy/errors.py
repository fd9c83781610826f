"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: config errors to 2, data errors to 3 and
numeric failures to 4.
"""

from __future__ import annotations


class NormalcyError(Exception):
    exit_code = 1


class ConfigError(NormalcyError, ValueError):
    exit_code = 2


class DataError(NormalcyError, ValueError):
    """Invalid input data. ``location`` names the file/line/offset when known."""

    exit_code = 3

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class FormatError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericError(NormalcyError, ArithmeticError):
    exit_code = 4


class RankDeficientError(NumericError):
    def __init__(self, message: str, achievable: int):
        self.achievable = achievable
        super().__init__(message)
