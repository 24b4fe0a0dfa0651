"""LSQR/LSMR, their flexible variants and the sketched flexible solvers.

All six solvers share one driver. They differ only in how the basis is
generated (Golub-Kahan bidiagonalization or the flexible Golub-Kahan
process with an orthogonalization window) and in which small least squares
problem is solved for the coefficients ``y_k`` at each iteration:

========  ==============================================================
lsqr      ``min ||beta e1 - B_{k+1,k} y||``
lsmr      ``min ||B_{k+1}^T (beta e1 - B_{k+1,k} y)||``
flsqr     ``min ||beta e1 - H_{k+1,k} y||``              (full window)
flsmr     ``min ||T_{k+1} (beta e1 - H_{k+1,k} y)||``    (full window)
sflsqr    ``min ||S b - S A Z_k y||``,                   ``S`` on ``R^m``
sflsmr    ``min ||S A^T b - S A^T W_{k+1} H_{k+1,k} y||``, ``S`` on ``R^n``
========  ==============================================================

The iterate is always ``x_k = Z_k y_k``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .linalg import least_squares
from .sketch import SketchOperator, identity_sketch
from .truncate import TruncationOperator, apply_truncation, identity_truncation

__all__ = [
    "SolverConfig",
    "SolveHistory",
    "GolubKahan",
    "FlexibleGolubKahan",
    "lsqr",
    "lsmr",
    "flsqr",
    "flsmr",
    "sflsqr",
    "sflsmr",
    "discrepancy_stop",
    "SOLVERS",
]

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Parameters shared by every solver.

    ``window=None`` means full orthogonalization. ``delta_e`` switches on the
    discrepancy principle: iterations stop at the first residual below
    ``eta * delta_e``; ``discrepancy_on`` selects whether the true residual or
    the minimized (sketched) objective is tested. ``reorthogonalize`` only
    affects lsqr and lsmr.
    """

    maxit: int = 50
    tol: float = 1e-12
    window: int | None = 2
    tau: TruncationOperator = field(default_factory=identity_truncation)
    sketch: SketchOperator | None = None
    eta: float = 1.01
    delta_e: float | None = None
    discrepancy_on: str = "true"
    record_residuals: bool = True
    store_iterates: bool = False
    breakdown_tol: float = 1e-14
    reorthogonalize: bool = False

    def __post_init__(self):
        if self.maxit < 1:
            raise ValueError("maxit must be at least 1")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be at least 1 (or None for full orthogonalization)")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.delta_e is not None:
            if self.delta_e < 0:
                raise ValueError("delta_e must be nonnegative")
            if not self.eta > 1:
                raise ValueError("the discrepancy safety factor eta must exceed 1")
        if self.discrepancy_on not in ("true", "sketched"):
            raise ValueError("discrepancy_on must be 'true' or 'sketched'")


@dataclass
class SolveHistory:
    """Per-iteration record of a solver run (iterations are numbered from 1)."""

    solver: str
    b_norm: float
    rhs_norm: float
    true_residual: list = field(default_factory=list)
    sketched_residual: list = field(default_factory=list)
    error: list = field(default_factory=list)
    coefficients: list = field(default_factory=list)
    iterates: list | None = None
    basis: np.ndarray | None = None
    x: np.ndarray | None = None
    stop_iteration: int | None = None
    stop_reason: str = "maxit"
    factorization: object = None

    @property
    def n_iter(self):
        return len(self.coefficients)

    def iterate(self, k):
        """Reconstruct ``x_k`` (``1 <= k <= n_iter``) from the stored basis."""
        if not 1 <= k <= self.n_iter:
            raise IndexError(f"iteration {k} outside 1..{self.n_iter}")
        return self.basis[:, :k] @ self.coefficients[k - 1]

    @property
    def res_rel(self):
        return np.asarray(self.true_residual) / self.b_norm

    @property
    def sketched_res_rel(self):
        return np.asarray(self.sketched_residual) / self.rhs_norm

    @property
    def err_rel(self):
        return np.asarray(self.error)


REORTH_RATIO = 0.7


def _orthogonalize(v, V, cols):
    """Modified Gram-Schmidt of ``v`` (in place) against ``V[:, cols]``.

    A second pass runs when the first removes most of ``v`` (norm drop below
    ``REORTH_RATIO``), which keeps the basis orthogonal to working precision
    once the iteration has converged. Returns the summed coefficients, so the
    factorization identities hold with either one or two passes.
    """
    coef = np.zeros(len(cols))
    before = np.linalg.norm(v)
    for _ in range(2):
        for i, j in enumerate(cols):
            c = V[:, j] @ v
            v -= c * V[:, j]
            coef[i] += c
        after = np.linalg.norm(v)
        if after > REORTH_RATIO * before:
            break
        before = after
    return coef


class GolubKahan:
    """Golub-Kahan bidiagonalization with the classical short recurrence.

    Exposes the same arrays as :class:`FlexibleGolubKahan` so the projected
    problems can be written once: ``H`` holds ``B_{k+1,k}`` and ``T`` holds
    ``B_{k+1}^T``; ``Z`` and ``P`` both hold the right basis ``V``.

    With ``reorthogonalize=True`` every new basis vector is additionally
    orthogonalized against all previous ones (the recurrence coefficients
    are unchanged), which removes the loss of orthogonality seen once the
    iteration has converged.
    """

    def __init__(self, A, b, capacity, breakdown_tol=1e-14, reorthogonalize=False):
        m, n = A.shape
        self.A = A
        self.reorthogonalize = reorthogonalize
        self.beta = float(np.linalg.norm(b))
        self.tol = breakdown_tol
        self.W = np.zeros((m, capacity + 1), order="F")
        self.P = np.zeros((n, capacity + 1), order="F")
        self.H = np.zeros((capacity + 1, capacity))
        self.T = np.zeros((capacity + 1, capacity + 1))
        self.k = 0
        self.breakdown = None
        self.W[:, 0] = b / self.beta
        d = A.adjoint(self.W[:, 0])
        self.first_adjoint = d
        alpha = np.linalg.norm(d)
        if alpha == 0:
            self.breakdown = "p"
            return
        self.T[0, 0] = alpha
        self.P[:, 0] = d / alpha

    @property
    def Z(self):
        return self.P

    def step(self):
        k = self.k
        alpha = self.T[k, k]
        Av = self.A.forward(self.P[:, k])
        u = Av - alpha * self.W[:, k]
        if self.reorthogonalize:
            Wk = self.W[:, : k + 1]
            u -= Wk @ (Wk.T @ u)
        self.H[k, k] = alpha
        beta = np.linalg.norm(u)
        self.k = k + 1
        if beta <= self.tol * np.linalg.norm(Av):
            self.breakdown = "w"
            return Av, None
        self.H[k + 1, k] = beta
        self.T[k, k + 1] = beta
        self.W[:, k + 1] = u / beta
        d_raw = self.A.adjoint(self.W[:, k + 1])
        v = d_raw - beta * self.P[:, k]
        if self.reorthogonalize:
            Pk = self.P[:, : k + 1]
            v -= Pk @ (Pk.T @ v)
        alpha = np.linalg.norm(v)
        if alpha <= self.tol * np.linalg.norm(d_raw):
            self.breakdown = "p"
            return Av, d_raw
        self.T[k + 1, k + 1] = alpha
        self.P[:, k + 1] = v / alpha
        return Av, d_raw


class FlexibleGolubKahan:
    """Flexible Golub-Kahan process with a sliding orthogonalization window.

    After ``k`` steps::

        A Z_k = W_{k+1} H_{k+1,k}        A^# W_{k+1} = P_{k+1} T_{k+1}
        Z_k = tau(P_k)

    where ``A^#`` is the operator's adjoint routine. The new ``w`` is
    orthogonalized against ``w_{k-l}, ..., w_k`` and the new direction ``p``
    against the last ``l`` directions. ``T`` is computed one column ahead so
    that the FLSMR projected problem is available at step ``k``.
    """

    def __init__(self, A, b, capacity, tau=None, window=None, breakdown_tol=1e-14):
        m, n = A.shape
        self.A = A
        self.tau = tau if tau is not None else identity_truncation()
        self.window = capacity + 1 if window is None else int(window)
        self.tol = breakdown_tol
        self.beta = float(np.linalg.norm(b))
        self.W = np.zeros((m, capacity + 1), order="F")
        self.P = np.zeros((n, capacity + 1), order="F")
        self.Z = np.zeros((n, capacity), order="F")
        self.H = np.zeros((capacity + 1, capacity))
        self.T = np.zeros((capacity + 1, capacity + 1))
        self.k = 0
        self.breakdown = None
        self.W[:, 0] = b / self.beta
        d = A.adjoint(self.W[:, 0])
        self.first_adjoint = d
        t = np.linalg.norm(d)
        if t == 0:
            self.breakdown = "p"
            return
        self.T[0, 0] = t
        self.P[:, 0] = d / t

    def step(self):
        """Append ``z_k``, ``w_{k+1}`` and ``p_{k+1}``.

        Returns ``(A z_k, A^# w_{k+1})`` before orthogonalization; the
        second entry is None when ``w`` broke down.
        """
        if self.breakdown is not None:
            raise RuntimeError(f"factorization broke down ({self.breakdown})")
        k, l = self.k, self.window
        z = apply_truncation(self.tau, self.P[:, k], call_index=k)
        self.Z[:, k] = z
        Az = self.A.forward(z)
        w = Az.copy()
        cols = range(max(0, k - l), k + 1)
        self.H[cols.start:k + 1, k] = _orthogonalize(w, self.W, cols)
        h = np.linalg.norm(w)
        self.k = k + 1
        if h <= self.tol * np.linalg.norm(Az):
            self.breakdown = "w"
            return Az, None
        self.H[k + 1, k] = h
        self.W[:, k + 1] = w / h
        d_raw = self.A.adjoint(self.W[:, k + 1])
        d = d_raw.copy()
        cols = range(max(0, k + 1 - l), k + 1)
        self.T[cols.start:k + 1, k + 1] = _orthogonalize(d, self.P, cols)
        t = np.linalg.norm(d)
        if t <= self.tol * np.linalg.norm(d_raw):
            self.breakdown = "p"
            return Az, d_raw
        self.T[k + 1, k + 1] = t
        self.P[:, k + 1] = d / t
        return Az, d_raw


# -- projected / sketched subproblems --------------------------------------

class _Projected:
    """``min ||beta e1 - H y||`` or its ``T``-weighted (normal equations) form."""

    def __init__(self, fac, weighted):
        self.fac = fac
        self.weighted = weighted
        self.rhs_norm = fac.beta * (fac.T[0, 0] if weighted else 1.0)

    def __call__(self, Az, d_raw):
        f, k = self.fac, self.fac.k
        H = f.H[: k + 1, :k]
        rhs = np.zeros(k + 1)
        rhs[0] = f.beta
        if self.weighted:
            T = f.T[: k + 1, : k + 1]
            H, rhs = T @ H, T @ rhs
        y = least_squares(H, rhs)
        return y, float(np.linalg.norm(rhs - H @ y))


class _SketchedResidual:
    """sFLSQR subproblem: sketched columns ``S A z_j`` grow one per step."""

    def __init__(self, fac, S, b, maxit):
        self.fac = fac
        self.S = S
        self.sb = S.apply(b)
        self.SAZ = np.zeros((S.s, maxit), order="F")
        self.rhs_norm = float(np.linalg.norm(self.sb))

    def __call__(self, Az, d_raw):
        k = self.fac.k
        self.SAZ[:, k - 1] = self.S.apply(Az)
        M = self.SAZ[:, :k]
        y = least_squares(M, self.sb)
        return y, float(np.linalg.norm(self.sb - M @ y))


class _SketchedNormal:
    """sFLSMR subproblem: columns ``S A^# w_j`` combined through ``H``."""

    def __init__(self, fac, S, maxit):
        self.fac = fac
        self.S = S
        self.SATW = np.zeros((S.s, maxit + 1), order="F")
        self.SATW[:, 0] = S.apply(fac.first_adjoint)
        self.satb = fac.beta * self.SATW[:, 0]
        self.rhs_norm = float(np.linalg.norm(self.satb))

    def __call__(self, Az, d_raw):
        f, k = self.fac, self.fac.k
        if d_raw is not None:
            self.SATW[:, k] = self.S.apply(d_raw)
        M = self.SATW[:, : k + 1] @ f.H[: k + 1, :k]
        y = least_squares(M, self.satb)
        return y, float(np.linalg.norm(self.satb - M @ y))


# -- driver -----------------------------------------------------------------

def _check_inputs(A, b, need_matched, name):
    b = np.asarray(b, dtype=float)
    if b.shape != (A.m,):
        raise ValueError(f"b has shape {b.shape}, operator expects ({A.m},)")
    if not np.all(np.isfinite(b)):
        raise ValueError("b contains non-finite entries")
    if not np.any(b):
        raise ValueError("b must be nonzero")
    if need_matched and not A.matched:
        raise ValueError(
            f"{name} needs the exact transpose; this operator has an unmatched adjoint. "
            "Use flsqr, flsmr, sflsqr or sflsmr instead."
        )
    return b


def _drive(name, A, b, cfg, x_true, fac, subproblem):
    need_x = cfg.record_residuals or x_true is not None or cfg.store_iterates
    hist = SolveHistory(
        solver=name,
        b_norm=float(np.linalg.norm(b)),
        rhs_norm=subproblem.rhs_norm,
        iterates=[] if cfg.store_iterates else None,
        factorization=fac,
    )
    xt_norm = None if x_true is None else float(np.linalg.norm(x_true))
    if fac.breakdown is not None:
        # A^# b = 0: nothing to iterate on
        hist.stop_reason = "breakdown"
        hist.basis = fac.Z[:, :0]
        hist.x = np.zeros(A.n)
        return hist
    x = None
    for it in range(1, cfg.maxit + 1):
        Az, d_raw = fac.step()
        y, objective = subproblem(Az, d_raw)
        hist.coefficients.append(y)
        hist.sketched_residual.append(objective)
        if need_x:
            x = fac.Z[:, :it] @ y
            if cfg.record_residuals:
                hist.true_residual.append(float(np.linalg.norm(A.forward(x) - b)))
            if x_true is not None:
                hist.error.append(float(np.linalg.norm(x - x_true) / xt_norm))
            if cfg.store_iterates:
                hist.iterates.append(x)
        if cfg.delta_e is not None:
            if cfg.discrepancy_on == "sketched":
                r = objective
            elif cfg.record_residuals:
                r = hist.true_residual[-1]
            else:
                r = float(np.linalg.norm(A.forward(fac.Z[:, :it] @ y) - b))
            if r <= cfg.eta * cfg.delta_e:
                hist.stop_iteration = it
                hist.stop_reason = "discrepancy"
                break
        if objective < cfg.tol * subproblem.rhs_norm:
            hist.stop_reason = "tol"
            break
        if fac.breakdown is not None:
            logger.debug("%s: breakdown (%s) at iteration %d", name, fac.breakdown, it)
            hist.stop_reason = "breakdown"
            break
    k = hist.n_iter
    hist.basis = fac.Z[:, :k]
    hist.x = x if x is not None else hist.basis @ hist.coefficients[-1]
    return hist


def lsqr(A, b, cfg=None, x_true=None):
    """LSQR on the Golub-Kahan bidiagonalization (matched adjoint only)."""
    cfg = cfg or SolverConfig()
    b = _check_inputs(A, b, True, "lsqr")
    fac = GolubKahan(A, b, cfg.maxit, cfg.breakdown_tol, cfg.reorthogonalize)
    return _drive("lsqr", A, b, cfg, x_true, fac, _Projected(fac, weighted=False))


def lsmr(A, b, cfg=None, x_true=None):
    """LSMR on the Golub-Kahan bidiagonalization (matched adjoint only)."""
    cfg = cfg or SolverConfig()
    b = _check_inputs(A, b, True, "lsmr")
    fac = GolubKahan(A, b, cfg.maxit, cfg.breakdown_tol, cfg.reorthogonalize)
    return _drive("lsmr", A, b, cfg, x_true, fac, _Projected(fac, weighted=True))


def flsqr(A, b, cfg=None, x_true=None):
    """Flexible LSQR. Always runs with full orthogonalization; ``cfg.window`` is ignored."""
    cfg = cfg or SolverConfig()
    b = _check_inputs(A, b, False, "flsqr")
    fac = FlexibleGolubKahan(A, b, cfg.maxit, cfg.tau, None, cfg.breakdown_tol)
    return _drive("flsqr", A, b, cfg, x_true, fac, _Projected(fac, weighted=False))


def flsmr(A, b, cfg=None, x_true=None):
    """Flexible LSMR. Always runs with full orthogonalization; ``cfg.window`` is ignored."""
    cfg = cfg or SolverConfig()
    b = _check_inputs(A, b, False, "flsmr")
    fac = FlexibleGolubKahan(A, b, cfg.maxit, cfg.tau, None, cfg.breakdown_tol)
    return _drive("flsmr", A, b, cfg, x_true, fac, _Projected(fac, weighted=True))


def sflsqr(A, b, cfg=None, x_true=None):
    """Sketched flexible LSQR.

    ``cfg.sketch`` must act on ``R^m``; when it is None an exact identity
    sketch is used.
    """
    cfg = cfg or SolverConfig()
    b = _check_inputs(A, b, False, "sflsqr")
    S = cfg.sketch if cfg.sketch is not None else identity_sketch(A.m)
    if S.d != A.m:
        raise ValueError(f"sflsqr sketch must act on R^{A.m}, got input dimension {S.d}")
    fac = FlexibleGolubKahan(A, b, cfg.maxit, cfg.tau, cfg.window, cfg.breakdown_tol)
    return _drive("sflsqr", A, b, cfg, x_true, fac, _SketchedResidual(fac, S, b, cfg.maxit))


def sflsmr(A, b, cfg=None, x_true=None):
    """Sketched flexible LSMR.

    ``cfg.sketch`` must act on ``R^n``; when it is None an exact identity
    sketch is used.
    """
    cfg = cfg or SolverConfig()
    b = _check_inputs(A, b, False, "sflsmr")
    S = cfg.sketch if cfg.sketch is not None else identity_sketch(A.n)
    if S.d != A.n:
        raise ValueError(f"sflsmr sketch must act on R^{A.n}, got input dimension {S.d}")
    fac = FlexibleGolubKahan(A, b, cfg.maxit, cfg.tau, cfg.window, cfg.breakdown_tol)
    return _drive("sflsmr", A, b, cfg, x_true, fac, _SketchedNormal(fac, S, cfg.maxit))


SOLVERS = {
    "lsqr": lsqr,
    "lsmr": lsmr,
    "flsqr": flsqr,
    "flsmr": flsmr,
    "sflsqr": sflsqr,
    "sflsmr": sflsmr,
}


def discrepancy_stop(history, eta, delta_e):
    """First iteration (1-based) with ``||A x_k - b|| <= eta * delta_e``, else None."""
    if not eta > 1:
        raise ValueError("eta must exceed 1")
    if delta_e < 0:
        raise ValueError("delta_e must be nonnegative")
    for k, r in enumerate(history.true_residual, start=1):
        if r <= eta * delta_e:
            return k
    return None
