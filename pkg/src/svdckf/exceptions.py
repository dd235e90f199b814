"""Exception hierarchy for svdckf."""

from __future__ import annotations

import numpy as np


class SvdCkfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(SvdCkfError, ValueError):
    """Input array is malformed or contains non-finite entries."""


class NotPositiveSemiDefinite(SvdCkfError, np.linalg.LinAlgError):
    """A covariance matrix has an eigenvalue below the roundoff tolerance."""


class NotPositiveDefinite(SvdCkfError, np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot."""


class SingularInnovationCovariance(SvdCkfError, np.linalg.LinAlgError):
    """The diagonal factor to be inverted has a (numerically) zero entry."""


class NumericalDivergence(SvdCkfError, FloatingPointError):
    """A simulated or propagated quantity became non-finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class FilterDiverged(SvdCkfError):
    """A filter recursion could not continue.

    ``kind`` names the trigger (see ``svdckf.filters.FailureKind``) and
    ``step`` is the sampling index at which it happened, when known.
    """

    def __init__(self, kind, step: int | None = None, message: str = ""):
        text = f"filter diverged ({kind})"
        if step is not None:
            text += f" at step {step}"
        if message:
            text += f": {message}"
        super().__init__(text)
        self.kind = kind
        self.step = step


class ConfigError(SvdCkfError, ValueError):
    """Scenario configuration is invalid."""
