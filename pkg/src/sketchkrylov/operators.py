"""Matrix-free linear operators with (possibly unmatched) adjoints.

Images are vectorized by column stacking throughout the package, i.e.
``vec(C) = C.ravel(order="F")``.
"""

from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm
from scipy import ndimage

__all__ = [
    "ImageGrid",
    "LinearOperator",
    "from_dense",
    "identity",
    "gaussian_blur",
    "gaussian_kernel",
    "subsample_mask",
    "compose",
    "ct_parallel",
    "ray_intersections",
    "perturb_adjoint",
    "asymmetry_measure",
]


@dataclass(frozen=True)
class ImageGrid:
    """Pixel grid with column-stacking vectorization."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def size(self):
        return self.height * self.width

    @property
    def shape(self):
        return (self.height, self.width)

    def vec(self, image):
        image = np.asarray(image)
        if image.shape != self.shape:
            raise ValueError(f"image shape {image.shape} does not match grid {self.shape}")
        return image.ravel(order="F")

    def unvec(self, c):
        c = np.asarray(c)
        if c.shape != (self.size,):
            raise ValueError(f"vector of shape {c.shape} does not match grid of {self.size} pixels")
        return c.reshape(self.shape, order="F")


class LinearOperator:
    """Linear map ``R^n -> R^m`` given by a forward and an adjoint routine.

    ``adjoint`` is allowed to be only an approximation of the transpose; in
    that case ``matched`` must be False.
    """

    def __init__(self, shape, forward, adjoint, matched=True, name=None):
        m, n = (int(d) for d in shape)
        if m < 1 or n < 1:
            raise ValueError(f"invalid operator shape {shape}")
        self.shape = (m, n)
        self._forward = forward
        self._adjoint = adjoint
        self.matched = bool(matched)
        self.name = name or "operator"

    def __repr__(self):
        return f"LinearOperator({self.name}, shape={self.shape}, matched={self.matched})"

    @property
    def m(self):
        return self.shape[0]

    @property
    def n(self):
        return self.shape[1]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected input of length {self.n}, got shape {x.shape}")
        return np.asarray(self._forward(x), dtype=float)

    def adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ValueError(f"expected input of length {self.m}, got shape {y.shape}")
        return np.asarray(self._adjoint(y), dtype=float)

    def __matmul__(self, x):
        return self.forward(x)

    def todense(self):
        """Assemble the forward matrix column by column (tests and diagnostics)."""
        out = np.empty(self.shape)
        e = np.zeros(self.n)
        for j in range(self.n):
            e[j] = 1.0
            out[:, j] = self.forward(e)
            e[j] = 0.0
        return out

    def adjoint_todense(self):
        """Assemble the matrix of the adjoint routine, shape ``(n, m)``."""
        out = np.empty((self.n, self.m))
        e = np.zeros(self.m)
        for i in range(self.m):
            e[i] = 1.0
            out[:, i] = self.adjoint(e)
            e[i] = 0.0
        return out


def from_dense(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")
    return LinearOperator(M.shape, M.__matmul__, M.T.__matmul__, matched=True, name="dense")


def from_sparse(M):
    M = sp.csr_matrix(M, dtype=float)
    Mt = M.T.tocsr()
    return LinearOperator(M.shape, M.__matmul__, Mt.__matmul__, matched=True, name="sparse")


def identity(n):
    return LinearOperator((n, n), np.copy, np.copy, matched=True, name="identity")


def gaussian_kernel(variance, truncate=4.0):
    """Normalized 1-D Gaussian kernel truncated at ``truncate`` standard deviations."""
    if not variance > 0:
        raise ValueError("variance must be positive")
    sd = math.sqrt(variance)
    radius = max(int(math.ceil(truncate * sd)), 1)
    t = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * t**2 / variance)
    return k / k.sum()


def gaussian_blur(grid, variance, boundary="reflect"):
    """Separable Gaussian blur on ``grid`` with reflexive boundary.

    The kernel is symmetric and the half-sample reflection keeps the blur
    matrix symmetric, so the adjoint is the blur itself.
    """
    if boundary != "reflect":
        raise ValueError("only the reflexive ('reflect') boundary is supported")
    k = gaussian_kernel(variance)

    def blur(x):
        img = grid.unvec(x)
        img = ndimage.correlate1d(img, k, axis=0, mode="reflect")
        img = ndimage.correlate1d(img, k, axis=1, mode="reflect")
        return grid.vec(img)

    return LinearOperator((grid.size, grid.size), blur, blur, matched=True, name="gaussian_blur")


def subsample_mask(grid, keep_fraction, seed=None):
    """Keep ``ceil(keep_fraction * n)`` randomly chosen pixels (sorted order)."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    n = grid.size
    m = int(math.ceil(keep_fraction * n))
    if m < 1:
        raise ValueError("empty selection")
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.permutation(n)[:m])

    def select(x):
        return x[kept]

    def scatter(y):
        out = np.zeros(n)
        out[kept] = y
        return out

    op = LinearOperator((m, n), select, scatter, matched=True, name="subsample_mask")
    op.kept = kept
    return op


def compose(outer, inner):
    """``outer ∘ inner`` with adjoint ``inner^# ∘ outer^#``."""
    if outer.n != inner.m:
        raise ValueError(
            f"cannot compose {outer.shape} after {inner.shape}: inner output {inner.m} != outer input {outer.n}"
        )
    return LinearOperator(
        (outer.m, inner.n),
        lambda x: outer.forward(inner.forward(x)),
        lambda y: inner.adjoint(outer.adjoint(y)),
        matched=outer.matched and inner.matched,
        name=f"{outer.name}*{inner.name}",
    )


# -- parallel-beam CT -------------------------------------------------------

def _ray_geometry(grid, n_angles, n_rays):
    angles = np.arange(n_angles) * (np.pi / n_angles)
    diag = math.hypot(grid.height, grid.width)
    offsets = -diag / 2 + (np.arange(n_rays) + 0.5) * (diag / n_rays)
    return angles, offsets


def ray_intersections(grid, theta, offset):
    """Pixels crossed by one parallel-beam ray and the lengths inside each.

    The grid has unit pixels centered at the origin, row 0 on top. The ray is
    ``{p : p . (cos theta, sin theta) = offset}``, traversed along
    ``(-sin theta, cos theta)``.

    Returns
    -------
    idx : ndarray of int
        Column-stacked pixel indices.
    lengths : ndarray
        Intersection lengths, same order.
    """
    H, W = grid.height, grid.width
    xlo, xhi = -W / 2, W / 2
    ylo, yhi = -H / 2, H / 2
    c, s = math.cos(theta), math.sin(theta)
    p0 = np.array([offset * c, offset * s])
    u = np.array([-s, c])

    # clip the parametric line against the bounding box; a ray running
    # along a pixel edge belongs to the pixel that floor() assigns it to,
    # i.e. the one to its right (x) or below it (y)
    lam_lo, lam_hi = -np.inf, np.inf
    for axis, lo, hi in ((0, xlo, xhi), (1, ylo, yhi)):
        if abs(u[axis]) < 1e-15:
            inside = lo <= p0[axis] < hi if axis == 0 else lo < p0[axis] <= hi
            if not inside:
                return np.zeros(0, dtype=int), np.zeros(0)
            continue
        a = (lo - p0[axis]) / u[axis]
        b = (hi - p0[axis]) / u[axis]
        lam_lo = max(lam_lo, min(a, b))
        lam_hi = min(lam_hi, max(a, b))
    if not lam_hi > lam_lo:
        return np.zeros(0, dtype=int), np.zeros(0)

    crossings = [np.array([lam_lo, lam_hi])]
    if abs(u[0]) >= 1e-15:
        crossings.append((np.arange(W + 1) + xlo - p0[0]) / u[0])
    if abs(u[1]) >= 1e-15:
        crossings.append((np.arange(H + 1) + ylo - p0[1]) / u[1])
    lam = np.concatenate(crossings)
    lam = np.unique(lam[(lam >= lam_lo) & (lam <= lam_hi)])
    seg = np.diff(lam)
    keep = seg > 1e-12
    mid = 0.5 * (lam[:-1] + lam[1:])[keep]
    seg = seg[keep]
    px = p0[0] + mid * u[0]
    py = p0[1] + mid * u[1]
    col = np.clip(np.floor(px - xlo).astype(int), 0, W - 1)
    row = np.clip(np.floor(yhi - py).astype(int), 0, H - 1)
    return row + col * H, seg


def ct_parallel(grid, n_angles, n_rays):
    """Parallel-beam projector with intersection-length (Siddon) weights.

    Angles are equispaced in ``[0, pi)`` and detector offsets cover the grid
    diagonal. Row ``a * n_rays + r`` holds ray ``r`` at angle ``a``.
    """
    if n_angles < 1 or n_rays < 1:
        raise ValueError("need at least one angle and one ray")
    angles, offsets = _ray_geometry(grid, n_angles, n_rays)
    rows, cols, vals = [], [], []
    for a, theta in enumerate(angles):
        for r, t in enumerate(offsets):
            idx, seg = ray_intersections(grid, theta, t)
            rows.append(np.full(idx.shape, a * n_rays + r))
            cols.append(idx)
            vals.append(seg)
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_angles * n_rays, grid.size),
    )
    op = from_sparse(M)
    op.name = "ct_parallel"
    op.matrix = M
    op.angles = angles
    op.offsets = offsets
    return op


# -- unmatched adjoints -----------------------------------------------------

def perturb_adjoint(op, asymmetry_target, seed=None, nnz_per_column=8):
    """Replace the adjoint by ``A^T + E`` with a seeded sparse Gaussian ``E``.

    ``E`` is scaled so that the expected value of ``|y^T E x|`` for ``x``,
    ``y`` uniform on the unit spheres equals ``asymmetry_target``. For a
    matrix with independent entries ``y^T E x`` is close to normal with
    variance ``||E||_F^2 / (m n)``, hence the ``sqrt(2 / pi)`` factor.
    """
    if not op.matched:
        raise ValueError("perturb_adjoint expects an operator with matched adjoint")
    if asymmetry_target < 0:
        raise ValueError("asymmetry_target must be nonnegative")
    m, n = op.shape
    if asymmetry_target == 0:
        return LinearOperator(op.shape, op.forward, op.adjoint, matched=True, name=op.name)
    rng = np.random.default_rng(seed)
    nnz = min(nnz_per_column * m, m * n)
    rows = rng.integers(0, n, size=nnz)
    cols = rng.integers(0, m, size=nnz)
    E = sp.csr_matrix((rng.standard_normal(nnz), (rows, cols)), shape=(n, m))
    expected = math.sqrt(2 / math.pi) * sparse_norm(E) / math.sqrt(m * n)
    E = E * (asymmetry_target / expected)

    def adjoint(y):
        return op.adjoint(y) + E @ y

    out = LinearOperator(op.shape, op.forward, adjoint, matched=False, name=f"{op.name}#")
    out.perturbation = E
    return out


def asymmetry_measure(op, n_probes=100, seed=None):
    """Mean of ``|x^T (A y) - y^T (A^# x)|`` over random unit probes."""
    if n_probes < 1:
        raise ValueError("n_probes must be at least 1")
    rng = np.random.default_rng(seed)
    m, n = op.shape
    total = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(m)
        x /= np.linalg.norm(x)
        y = rng.standard_normal(n)
        y /= np.linalg.norm(y)
        total += abs(x @ op.forward(y) - y @ op.adjoint(x))
    return total / n_probes
