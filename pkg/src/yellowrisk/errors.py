"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class YellowRiskError(Exception):
    """Base class for all errors raised by this package."""


class InputError(YellowRiskError, ValueError):
    """Bad or incomplete input data. The CLI maps this to exit status 1."""


class ClimateFormatError(InputError):
    """A climate CSV row could not be parsed or violates a record invariant."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


class CoverageError(InputError):
    """A daily series does not cover the dates an operation needs."""


class RankDeficientError(InputError):
    """The regression design matrix does not have full column rank."""


class InvariantError(YellowRiskError):
    """An internal invariant was violated. The CLI maps this to exit status 2."""
