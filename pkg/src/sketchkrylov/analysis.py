"""Residual bounds for the sketched solvers and Monte Carlo checks.

Every quantity is measured against the optimal residual in the current
approximation subspace,

    r_opt = min_y ||A Z_k y - b|| = ||(I - Q Q^T) b||,   Q = orth(A Z_k),

and the deterministic factors

    sflsqr:  sqrt(1 + ||(S Q)^+ S Q_perp||^2)
    sflsmr:  sqrt(1 + ||(S A^T Q)^+ S A^T Q_perp||^2)

bound the sketched residuals from above. ``Q_perp`` is never formed: since
``G = (S Q)^+ S`` satisfies ``G Q = I``, ``||G Q_perp|| = ||G (I - Q Q^T)||
= ||G - Q^T||``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .sketch import SketchOperator, gaussian_sketch
from .solvers import SolverConfig, sflsmr, sflsqr

__all__ = [
    "OptimalResidual",
    "BoundReport",
    "optimal_residual",
    "bound_sflsqr",
    "bound_sflsmr",
    "bound_report",
    "corollary_check",
    "predicted_factor",
    "materialize_columns",
]

RANK_RTOL = 1e-12


@dataclass
class OptimalResidual:
    r_opt: float
    y_opt: np.ndarray
    Q: np.ndarray
    rank_deficient: bool = False

    def project_out(self, v):
        """Action of ``I - Q Q^T``."""
        return v - self.Q @ (self.Q.T @ v)


@dataclass
class BoundReport:
    """Per-iteration residuals and theoretical bounds (index ``i`` is iteration ``i + 1``)."""

    r_opt: list = field(default_factory=list)
    r_sflsqr: list = field(default_factory=list)
    r_sflsmr: list = field(default_factory=list)
    bound1: list = field(default_factory=list)
    bound2: list = field(default_factory=list)
    slack: float = 1e-9

    @property
    def n_iter(self):
        return len(self.r_opt)

    @property
    def satisfied1(self):
        return [r <= b + self.slack for r, b in zip(self.r_sflsqr, self.bound1)]

    @property
    def satisfied2(self):
        return [r <= b + self.slack for r, b in zip(self.r_sflsmr, self.bound2)]

    @property
    def violations(self):
        return self.satisfied1.count(False) + self.satisfied2.count(False)

    def rows(self):
        for i in range(self.n_iter):
            yield {
                "iter": i + 1,
                "r_opt": self.r_opt[i],
                "r_sflsqr": self.r_sflsqr[i],
                "r_sflsmr": self.r_sflsmr[i],
                "bound1": self.bound1[i],
                "bound2": self.bound2[i],
                "ok1": int(self.satisfied1[i]),
                "ok2": int(self.satisfied2[i]),
            }


def materialize_columns(A, Z):
    """``A @ Z`` for a matrix-free operator, one forward apply per column."""
    Z = np.asarray(Z, dtype=float)
    out = np.empty((A.m, Z.shape[1]))
    for j in range(Z.shape[1]):
        out[:, j] = A.forward(Z[:, j])
    return out


def optimal_residual(A, Z, b):
    """Best residual over ``range(Z)`` via a column-pivoted QR of ``A Z``.

    Numerically dependent columns are dropped (``rank_deficient`` is set);
    ``y_opt`` is then the basic solution on the retained columns.
    """
    b = np.asarray(b, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(A.n, -1)
    k = Z.shape[1]
    if k == 0:
        return OptimalResidual(float(np.linalg.norm(b)), np.zeros(0), np.zeros((A.m, 0)))
    M = materialize_columns(A, Z)
    Qf, R, piv = scipy.linalg.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_RTOL * diag[0])) if diag[0] > 0 else 0
    Q = Qf[:, :rank]
    qtb = Q.T @ b
    y = np.zeros(k)
    if rank:
        y[piv[:rank]] = scipy.linalg.solve_triangular(R[:rank, :rank], qtb)
    r_opt = float(np.linalg.norm(b - Q @ qtb))
    return OptimalResidual(r_opt, y, Q, rank_deficient=rank < k)


def _projected_pinv_norm(SQ, SX, Q):
    """``||(SQ)^+ SX - Q^T||_2`` where ``SX`` is the sketch applied to ``I_m``."""
    if SQ.shape[0] < SQ.shape[1]:
        raise ValueError(f"sketch has {SQ.shape[0]} rows for a {SQ.shape[1]}-dimensional subspace; "
                         "the bound needs a full-rank sketched basis")
    sigma = np.linalg.svd(SQ, compute_uv=False)
    if sigma.size == 0:
        return 0.0
    if sigma[-1] <= RANK_RTOL * sigma[0]:
        raise ValueError("sketched basis is rank deficient; the bound does not apply")
    G = np.linalg.lstsq(SQ, SX, rcond=None)[0]
    return float(np.linalg.norm(G - Q.T, 2))


def bound_sflsqr(S, Q):
    """Factor ``sqrt(1 + ||(S Q)^+ S Q_perp||^2)`` for a sketch on ``R^m``."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] != S.d:
        raise ValueError(f"Q has {Q.shape[0]} rows, sketch acts on R^{S.d}")
    if Q.shape[1] in (0, Q.shape[0]):
        return 1.0
    nu = _projected_pinv_norm(S.apply(Q), S.todense(), Q)
    return float(np.sqrt(1.0 + nu**2))


def bound_sflsmr(S, A, Q):
    """Factor ``sqrt(1 + ||(S A^T Q)^+ S A^T Q_perp||^2)`` for a sketch on ``R^n``.

    Uses the exact transpose; ``S A^T`` is formed from ``s`` forward applies.
    """
    Q = np.asarray(Q, dtype=float)
    if S.d != A.n:
        raise ValueError(f"sketch acts on R^{S.d}, operator input dimension is {A.n}")
    if Q.shape[1] in (0, Q.shape[0]):
        return 1.0
    SAt = materialize_columns(A, S.todense().T).T
    nu = _projected_pinv_norm(SAt @ Q, SAt, Q)
    return float(np.sqrt(1.0 + nu**2))


def bound_report(A, b, S_m, S_n, cfg=None, slack=1e-9):
    """Run sflsqr (sketch ``S_m``) and sflsmr (sketch ``S_n``) and evaluate both bounds.

    Both runs build the same basis ``Z_k`` because the basis does not depend
    on the sketch.
    """
    cfg = cfg or SolverConfig()
    base = dict(vars(cfg))
    base.update(record_residuals=True, delta_e=None)
    hq = sflsqr(A, b, SolverConfig(**{**base, "sketch": S_m}))
    hm = sflsmr(A, b, SolverConfig(**{**base, "sketch": S_n}))
    report = BoundReport(slack=slack)
    for k in range(1, min(hq.n_iter, hm.n_iter) + 1):
        opt = optimal_residual(A, hq.basis[:, :k], b)
        report.r_opt.append(opt.r_opt)
        report.r_sflsqr.append(hq.true_residual[k - 1])
        report.r_sflsmr.append(hm.true_residual[k - 1])
        report.bound1.append(opt.r_opt * bound_sflsqr(S_m, opt.Q))
        report.bound2.append(opt.r_opt * bound_sflsmr(S_n, A, opt.Q))
    return report


def predicted_factor(k, s, formula="s"):
    """Expected ratio ``E[r_sflsqr^2] / r_opt^2`` for a Gaussian sketch.

    ``formula="s"`` gives ``1 + s / (s - k - 1)``; ``formula="k"``
    gives ``1 + k / (s - k - 1) = 1 + E||(S Q)^+||_F^2`` for an ``s x k``
    standard Gaussian ``S Q`` (independent of ``S Q_perp``).
    """
    if s <= k + 1:
        raise ValueError(f"need s > k + 1, got s={s}, k={k}")
    if formula == "s":
        return 1.0 + s / (s - k - 1)
    if formula == "k":
        return 1.0 + k / (s - k - 1)
    raise ValueError(f"unknown formula {formula!r}")


def corollary_check(A, Z, b, s, n_trials=2000, seed=0, scale=1.0, formula="s"):
    """Monte Carlo mean of the squared sflsqr residual over fresh Gaussian sketches.

    The subspace ``Z`` is fixed; trial ``t`` draws its sketch from the
    stream ``(seed, t)``. Returns ``(empirical_mean, predicted)`` where
    ``predicted = r_opt^2 * predicted_factor(k, s, formula)``.
    """
    Z = np.asarray(Z, dtype=float).reshape(A.n, -1)
    k = Z.shape[1]
    predicted = optimal_residual(A, Z, b).r_opt ** 2 * predicted_factor(k, s, formula)
    b = np.asarray(b, dtype=float)
    M = materialize_columns(A, Z)
    total = 0.0
    for t in range(n_trials):
        S = gaussian_sketch(s, A.m, seed=[seed, t], scale=scale)
        y = np.linalg.lstsq(S.apply(M), S.apply(b), rcond=None)[0]
        total += float(np.sum((M @ y - b) ** 2))
    return total / n_trials, predicted
