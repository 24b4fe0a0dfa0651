"""Basis-modification operators applied to each new solution direction."""

from dataclasses import dataclass

import numpy as np

from .linalg import randomized_svd, svd
from .operators import ImageGrid

__all__ = [
    "TruncationOperator",
    "identity_truncation",
    "rank_truncation",
    "randomized_rank_truncation",
    "apply_truncation",
]


@dataclass(frozen=True)
class TruncationOperator:
    """Column-wise map ``tau: R^n -> R^n``.

    ``kind`` is one of ``"identity"``, ``"rank_exact"`` (best rank-``r``
    approximation of the reshaped vector) or ``"rank_randomized"`` (the
    same with a randomized SVD).
    """

    kind: str = "identity"
    rank: int = 0
    grid: ImageGrid = None
    oversample: int = 5
    power_iters: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "rank_exact", "rank_randomized"):
            raise ValueError(f"unknown truncation kind {self.kind!r}")
        if self.kind != "identity":
            if self.grid is None:
                raise ValueError("rank truncation needs an image grid")
            if not 1 <= self.rank <= min(self.grid.shape):
                raise ValueError(
                    f"rank {self.rank} must lie in [1, {min(self.grid.shape)}] for grid {self.grid.shape}"
                )

    @property
    def is_identity(self):
        return self.kind == "identity"

    def __call__(self, c, call_index=0):
        return apply_truncation(self, c, call_index)


def identity_truncation():
    return TruncationOperator("identity")


def rank_truncation(grid, rank):
    return TruncationOperator("rank_exact", rank, grid)


def randomized_rank_truncation(grid, rank, oversample=5, power_iters=1, seed=0):
    return TruncationOperator("rank_randomized", rank, grid, oversample, power_iters, seed)


def apply_truncation(tau, c, call_index=0):
    """Apply ``tau`` to one vector.

    ``call_index`` selects the random stream of the randomized kind, so a
    solver run that passes its iteration counter is reproducible.
    """
    c = np.asarray(c, dtype=float)
    if tau.kind == "identity":
        return c
    C = tau.grid.unvec(c)
    r = tau.rank
    if tau.kind == "rank_exact":
        f = svd(C)
        return tau.grid.vec((f.u[:, :r] * f.sigma[:r]) @ f.vt[:r])
    oversample = min(tau.oversample, min(C.shape) - r)
    f = randomized_svd(C, r, oversample, tau.power_iters, seed=[tau.seed, call_index])
    return tau.grid.vec(f.reconstruct())
