"""Continuous-discrete cubature Kalman filters in conventional and SVD factored form."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConfigError,
    FilterDiverged,
    InvalidInput,
    NotPositiveDefinite,
    NotPositiveSemiDefinite,
    NumericalDivergence,
    SingularInnovationCovariance,
)
from .filters import FilterSpec, FilterState, Form, Scheme, run_filter, run_filter_batch  # noqa: E402
from .linalg import CholeskyFactor, SvdFactors  # noqa: E402
from .model import StateSpaceModel, coordinated_turn_model, linear_model  # noqa: E402
from .sde import SubdivisionGrid  # noqa: E402

__all__ = [
    "CholeskyFactor", "ConfigError", "FilterDiverged", "FilterSpec", "FilterState", "Form",
    "InvalidInput", "NotPositiveDefinite", "NotPositiveSemiDefinite", "NumericalDivergence",
    "Scheme", "SingularInnovationCovariance", "StateSpaceModel", "SubdivisionGrid", "SvdFactors",
    "coordinated_turn_model", "linear_model", "run_filter", "run_filter_batch",
]
