"""Random sketching operators and an empirical subspace-embedding check."""

import math

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SketchOperator",
    "gaussian_sketch",
    "countsketch",
    "identity_sketch",
    "make_sketch",
    "embedding_distortion",
]


class SketchOperator:
    """Seeded linear map ``R^d -> R^s``.

    ``apply`` accepts a vector of length ``d`` or a ``(d, k)`` array whose
    columns are sketched independently.
    """

    def __init__(self, kind, s, d, seed=None, scale=1.0, *, matrix=None, rows=None, signs=None):
        self.kind = kind
        self.s = int(s)
        self.d = int(d)
        self.seed = seed
        self.scale = float(scale)
        self._matrix = matrix
        self._rows = rows
        self._signs = signs
        self._sparse = None
        if kind == "countsketch":
            self._sparse = sp.csr_matrix(
                (signs * self.scale, (rows, np.arange(self.d))), shape=(self.s, self.d)
            )

    def __repr__(self):
        return f"SketchOperator(kind={self.kind!r}, s={self.s}, d={self.d}, seed={self.seed})"

    @property
    def shape(self):
        return (self.s, self.d)

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.d:
            raise ValueError(f"sketch expects leading dimension {self.d}, got {v.shape[0]}")
        if self.kind == "identity":
            return self.scale * v
        if self.kind == "gaussian":
            return self._matrix @ v
        if v.ndim == 1:
            return np.bincount(self._rows, weights=self._signs * v, minlength=self.s) * self.scale
        return self._sparse @ v

    __call__ = apply

    def __matmul__(self, v):
        return self.apply(v)

    def todense(self):
        if self.kind == "gaussian":
            return self._matrix.copy()
        if self.kind == "identity":
            return self.scale * np.eye(self.d)
        return self._sparse.toarray()


def _check_dims(s, d):
    if s < 1 or s > d:
        raise ValueError(f"sketch size must satisfy 1 <= s <= d, got s={s}, d={d}")


def gaussian_sketch(s, d, seed=None, scale=None):
    """Dense sketch with i.i.d. ``N(0, 1) * scale`` entries.

    ``scale`` defaults to ``1 / sqrt(s)`` so that ``E ||S v||^2 = ||v||^2``.
    """
    _check_dims(s, d)
    if scale is None:
        scale = 1.0 / math.sqrt(s)
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((s, d)) * scale
    return SketchOperator("gaussian", s, d, seed, scale, matrix=matrix)


def countsketch(s, d, seed=None):
    """Sparse sketch: each input coordinate lands in one random row with a random sign."""
    _check_dims(s, d)
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, s, size=d)
    signs = rng.choice(np.array([-1.0, 1.0]), size=d)
    return SketchOperator("countsketch", s, d, seed, 1.0, rows=rows, signs=signs)


def identity_sketch(d):
    """Exact (unsketched) map, used to reduce sketched solvers to their classical forms."""
    return SketchOperator("identity", d, d, None, 1.0)


def make_sketch(kind, s, d, seed=None):
    if kind == "gaussian":
        return gaussian_sketch(s, d, seed)
    if kind == "countsketch":
        return countsketch(s, d, seed)
    if kind == "identity":
        return identity_sketch(d)
    raise ValueError(f"unknown sketch kind {kind!r}")


def embedding_distortion(S, basis, n_probes=1000, seed=None, exact=False):
    """Range of ``||S V c|| / ||V c||`` over the subspace spanned by ``basis``.

    With ``exact=True`` the extremes are the extreme singular values of
    ``S @ V``; otherwise they are estimated from random coefficient probes.
    """
    V = np.asarray(basis, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != S.d:
        raise ValueError(f"basis has {V.shape[0]} rows, sketch expects {S.d}")
    SV = S.apply(V)
    if exact:
        sigma = np.linalg.svd(SV, compute_uv=False)
        return float(sigma[-1]), float(sigma[0])
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((V.shape[1], n_probes))
    ratios = np.linalg.norm(SV @ C, axis=0) / np.linalg.norm(V @ C, axis=0)
    return float(ratios.min()), float(ratios.max())
