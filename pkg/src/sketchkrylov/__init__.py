"""Sketched flexible Krylov solvers for least squares and linear inverse problems."""

__version__ = "0.1.0"

from .operators import ImageGrid, LinearOperator, from_dense, from_sparse
from .sketch import SketchOperator, countsketch, gaussian_sketch, identity_sketch, make_sketch
from .truncate import (
    TruncationOperator,
    identity_truncation,
    randomized_rank_truncation,
    rank_truncation,
)
from .solvers import (
    SOLVERS,
    SolveHistory,
    SolverConfig,
    discrepancy_stop,
    flsmr,
    flsqr,
    lsmr,
    lsqr,
    sflsmr,
    sflsqr,
)

__all__ = [
    "__version__",
    "ImageGrid",
    "LinearOperator",
    "from_dense",
    "from_sparse",
    "SketchOperator",
    "gaussian_sketch",
    "countsketch",
    "identity_sketch",
    "make_sketch",
    "TruncationOperator",
    "identity_truncation",
    "rank_truncation",
    "randomized_rank_truncation",
    "SolverConfig",
    "SolveHistory",
    "SOLVERS",
    "lsqr",
    "lsmr",
    "flsqr",
    "flsmr",
    "sflsqr",
    "sflsmr",
    "discrepancy_stop",
]
