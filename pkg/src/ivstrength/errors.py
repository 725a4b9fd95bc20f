"""Exception hierarchy shared by all modules."""

from __future__ import annotations

import numpy as np


class IVStrengthError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(IVStrengthError, ValueError):
    """Inputs or settings that can never produce a valid run."""


class DataFormatError(IVStrengthError, ValueError):
    """A data file could not be parsed.

    ``line`` is the 1-based line number in the file (the header is line 1)
    and ``column`` the offending column name, when known.
    """

    def __init__(self, message: str, *, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class RankDeficientError(IVStrengthError, np.linalg.LinAlgError):
    """Instrument matrix does not have full column rank."""

    def __init__(self, rank: int, expected: int):
        self.rank = rank
        self.expected = expected
        super().__init__(f"instrument matrix has numerical rank {rank}, expected {expected}")


class SingularGramError(IVStrengthError, np.linalg.LinAlgError):
    """A p x p Gram matrix is singular or too ill-conditioned to invert."""

    def __init__(self, which: str, rcond: float):
        self.which = which
        self.rcond = rcond
        super().__init__(f"{which} is singular or ill-conditioned (reciprocal condition {rcond:.3g})")


class SingularCovarianceError(IVStrengthError, np.linalg.LinAlgError):
    """The jackknife covariance estimate cannot be inverted."""

    def __init__(self, eigenvalues: np.ndarray):
        self.eigenvalues = np.asarray(eigenvalues)
        super().__init__(
            "jackknife covariance estimate is singular; eigenvalues: "
            + ", ".join(f"{v:.6g}" for v in self.eigenvalues)
        )


class DegenerateSubsampleError(IVStrengthError, RuntimeError):
    """Too many subsamples produced a statistic that could not be evaluated."""
