"""Small dense kernels: least squares, SVD and randomized SVD.

Matrices handled here are the projected or sketched systems built by the
solvers (at most a few hundred columns), so dense O(n^3) routines are fine.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["SvdFactors", "least_squares", "svd", "randomized_svd"]

# relative singular value cutoff for the minimum-norm guard
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``M = u @ diag(sigma) @ vt`` with ``sigma`` nonincreasing."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def rank(self):
        return self.sigma.shape[0]

    def reconstruct(self):
        return (self.u * self.sigma) @ self.vt


def _finite_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def least_squares(M, rhs):
    """Minimum-norm minimizer of ``||M y - rhs||_2``.

    Columns of ``M`` whose singular values fall below ``1e-12 * ||M||_2`` are
    treated as numerically dependent, which yields the minimum-norm solution
    for rank-deficient systems.
    """
    M = _finite_matrix(M)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim != 1 or rhs.shape[0] != M.shape[0]:
        raise ValueError(
            f"rhs of shape {rhs.shape} does not match matrix with {M.shape[0]} rows"
        )
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs contains non-finite entries")
    if M.shape[1] == 0:
        return np.zeros(0)
    y, *_ = np.linalg.lstsq(M, rhs, rcond=RANK_RTOL)
    return y


def svd(M):
    """Thin SVD of a finite dense matrix."""
    M = _finite_matrix(M)
    u, sigma, vt = np.linalg.svd(M, full_matrices=False)
    return SvdFactors(u, sigma, vt)


def randomized_svd(M, r, oversample=5, power_iters=1, seed=None):
    """Rank-``r`` randomized SVD (range finder with power iterations).

    Parameters
    ----------
    M : array_like, shape (rows, cols)
        Matrix to approximate.
    r : int
        Target rank.
    oversample : int
        Extra random samples beyond ``r``.
    power_iters : int
        Number of subspace iterations with ``M @ M.T``; each is
        re-orthonormalized to avoid losing the small singular directions.
    seed : int, sequence of int or numpy Generator, optional

    Returns
    -------
    SvdFactors
        Factors of rank at most ``r``.
    """
    M = _finite_matrix(M)
    rows, cols = M.shape
    if r < 1:
        raise ValueError("rank must be at least 1")
    if oversample < 0 or power_iters < 0:
        raise ValueError("oversample and power_iters must be nonnegative")
    if r + oversample > min(rows, cols):
        raise ValueError(
            f"rank + oversample = {r + oversample} exceeds min(rows, cols) = {min(rows, cols)}"
        )
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((cols, r + oversample))
    Q, _ = np.linalg.qr(M @ omega)
    for _ in range(power_iters):
        Q, _ = np.linalg.qr(M.T @ Q)
        Q, _ = np.linalg.qr(M @ Q)
    ub, sigma, vt = np.linalg.svd(Q.T @ M, full_matrices=False)
    u = Q @ ub
    return SvdFactors(u[:, :r], sigma[:r], vt[:r])
