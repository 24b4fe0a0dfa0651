"""scikit-learn style wrappers around the solvers.

The design matrix ``X`` plays the role of ``A`` (``m`` rows, ``n``
unknowns) and the target ``y`` the role of ``b``; there is no intercept.
``X`` may be a dense array, a scipy sparse matrix or a
:class:`~sketchkrylov.operators.LinearOperator` (the only way to pass an
unmatched adjoint).

>>> import numpy as np
>>> from sketchkrylov.estimators import SketchedFLSQR
>>> rng = np.random.default_rng(0)
>>> X = rng.standard_normal((200, 20)); y = X @ np.ones(20)
>>> est = SketchedFLSQR(maxit=20, random_state=0).fit(X, y)
>>> bool(np.allclose(est.coef_, 1.0))
True
"""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .operators import ImageGrid, LinearOperator, from_dense, from_sparse
from .sketch import make_sketch
from .solvers import SolverConfig, flsmr, flsqr, lsmr, lsqr, sflsmr, sflsqr
from .truncate import identity_truncation, randomized_rank_truncation, rank_truncation

__all__ = [
    "check_operator",
    "check_rhs",
    "LSQR",
    "LSMR",
    "FLSQR",
    "FLSMR",
    "SketchedFLSQR",
    "SketchedFLSMR",
]


def check_operator(X):
    """Return a :class:`LinearOperator` for a dense, sparse or operator input."""
    if isinstance(X, LinearOperator):
        return X
    if sp.issparse(X):
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        return from_sparse(X)
    X = check_array(X, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)
    return from_dense(X)


def check_rhs(y, m):
    """Validate the right-hand side against the operator's row count."""
    y = column_or_1d(np.asarray(y, dtype=np.float64), warn=True)
    if y.shape[0] != m:
        raise ValueError(f"y has {y.shape[0]} entries, X has {m} rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains NaN or infinity")
    return y


class _KrylovRegressor(RegressorMixin, BaseEstimator):
    _solver = None
    _sketch_domain = None  # "rows" (R^m), "cols" (R^n) or None

    def __init__(self, maxit=50, tol=1e-12, eta=1.01, noise_norm=None,
                 truncation_rank=None, image_shape=None, randomized_truncation=False,
                 window=2, sketch="gaussian", sketch_size=None, random_state=None):
        self.maxit = maxit
        self.tol = tol
        self.eta = eta
        self.noise_norm = noise_norm
        self.truncation_rank = truncation_rank
        self.image_shape = image_shape
        self.randomized_truncation = randomized_truncation
        self.window = window
        self.sketch = sketch
        self.sketch_size = sketch_size
        self.random_state = random_state

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.sparse = True
        return tags

    def _seed(self):
        rs = self.random_state
        if isinstance(rs, np.random.Generator):
            return int(rs.integers(2**63))
        if isinstance(rs, np.random.RandomState):
            return int(rs.randint(2**31))
        return rs

    def _truncation(self, n):
        if not self.truncation_rank:
            return identity_truncation()
        if self.image_shape is None:
            raise ValueError("truncation_rank needs image_shape=(height, width)")
        grid = ImageGrid(*self.image_shape)
        if grid.size != n:
            raise ValueError(f"image_shape {self.image_shape} has {grid.size} pixels, X has {n} columns")
        if self.randomized_truncation:
            return randomized_rank_truncation(grid, self.truncation_rank, seed=self._seed() or 0)
        return rank_truncation(grid, self.truncation_rank)

    def _config(self, A):
        sketch = None
        if self._sketch_domain is not None:
            d = A.m if self._sketch_domain == "rows" else A.n
            s = self.sketch_size if self.sketch_size is not None else min(2 * self.maxit + 1, d)
            sketch = make_sketch(self.sketch, s, d, seed=self._seed())
        return SolverConfig(
            maxit=self.maxit,
            tol=self.tol,
            window=self.window,
            tau=self._truncation(A.n),
            sketch=sketch,
            eta=self.eta,
            delta_e=self.noise_norm,
        )

    def fit(self, X, y, x_true=None):
        """Run the solver on ``X w = y``.

        ``x_true`` (optional) records the relative error history in
        ``history_.error``.
        """
        A = check_operator(X)
        b = check_rhs(y, A.m)
        cfg = self._config(A)
        self.history_ = type(self)._solver(A, b, cfg, x_true=x_true)
        self.coef_ = self.history_.x
        self.n_iter_ = self.history_.n_iter
        self.n_features_in_ = A.n
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        A = check_operator(X)
        if A.n != self.n_features_in_:
            raise ValueError(
                f"X has {A.n} features, but {type(self).__name__} is expecting "
                f"{self.n_features_in_} features as input"
            )
        return A.forward(self.coef_)


class LSQR(_KrylovRegressor):
    """LSQR (matched adjoint only). Truncation and sketch parameters are ignored."""
    _solver = staticmethod(lsqr)


class LSMR(_KrylovRegressor):
    """LSMR (matched adjoint only). Truncation and sketch parameters are ignored."""
    _solver = staticmethod(lsmr)


class FLSQR(_KrylovRegressor):
    """Flexible LSQR with full orthogonalization and optional rank truncation."""
    _solver = staticmethod(flsqr)


class FLSMR(_KrylovRegressor):
    """Flexible LSMR with full orthogonalization and optional rank truncation."""
    _solver = staticmethod(flsmr)


class SketchedFLSQR(_KrylovRegressor):
    """Sketched flexible LSQR; the sketch acts on the rows of ``X``."""
    _solver = staticmethod(sflsqr)
    _sketch_domain = "rows"


class SketchedFLSMR(_KrylovRegressor):
    """Sketched flexible LSMR; the sketch acts on the columns of ``X``."""
    _solver = staticmethod(sflsmr)
    _sketch_domain = "cols"
