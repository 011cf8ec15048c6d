"""Exception hierarchy shared across the package.

CLI exit codes: input errors exit 2, numerical failures exit 3, file-format
and I/O failures exit 4.
"""

from __future__ import annotations


class KnitError(Exception):
    """Base class for all knit errors."""

    exit_code = 1


class InputError(KnitError):
    """Invalid user input: bad config values, violated preconditions."""

    exit_code = 2


class NumericalError(KnitError):
    """Numerical failure: non-finite values, eigensolver non-convergence,
    inconsistent covariance blocks."""

    exit_code = 3


class FormatError(KnitError):
    """Corrupt, truncated, or version-mismatched data files."""

    exit_code = 4


class ZeroCountError(InputError):
    """A marginal or co-occurrence count needed as a divisor is zero.

    Carries the offending codes so callers can exclude or floor upstream.
    """

    def __init__(self, message: str, codes=()):
        super().__init__(message)
        self.codes = tuple(codes)
