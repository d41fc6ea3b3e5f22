"""Partial match cost in random 2-d search trees: trees, limit process and asymptotic checks."""

from .constants import (
    BETA,
    ConstantsTable,
    MomentSequence,
    beta_fn,
    constants,
    gamma_fn,
    limit_moments,
    mean_curve,
    moment_recurrence,
)
from .trees import (
    CostProfile,
    DuplicateCoordinateError,
    Point,
    Region,
    SearchTree,
    TreeKind,
    build,
    cost_profile,
    partial_match_cost,
    poisson_point_count,
    sample_uniform_points,
    worst_query_cost,
)

__version__ = "0.1.0"
