"""Numerical toolkit for one-dimensional diffusions given by a scale
function and a speed measure: boundary classification, L2-harmonic bases,
exit-time functionals with finite-difference and Monte Carlo oracles, and
generator-domain membership."""

from .errors import (
    BiasUnbounded,
    CaseMismatch,
    ConvergenceUndecided,
    CrossCheckFailed,
    DharmError,
    DomainError,
    InconsistentSpec,
    NonFinite,
    NotInDomainShape,
    SeriesOverflow,
    SingularMesh,
    TailNotCertified,
)
from .measures import (
    BoundaryLimit,
    DiffusionSpec,
    Interval,
    LimitPolicy,
    ScaleFunction,
    SpeedMeasure,
    limit_at_boundary,
    mu,
    scale_limit,
    sigma,
    stieltjes_integral,
)
from .families import bessel, brownian, brownian_drift, make_family, ou

__version__ = "0.1.0"
