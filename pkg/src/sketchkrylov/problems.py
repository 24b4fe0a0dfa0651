"""Test problem generators, phantoms and PGM image I/O."""

from dataclasses import dataclass, field
import math

import numpy as np

from .operators import (
    ImageGrid,
    compose,
    ct_parallel,
    from_dense,
    gaussian_blur,
    perturb_adjoint,
    subsample_mask,
)

__all__ = [
    "Problem",
    "seed_streams",
    "add_noise",
    "synthetic_decay",
    "shepp_logan",
    "low_rank_scene",
    "default_rank",
    "deblur_inpaint_problem",
    "ct_problem",
    "write_pgm",
    "read_pgm",
]


@dataclass
class Problem:
    """Linear inverse problem ``b = A x_true + e``.

    ``delta`` is the relative noise level ``||e|| / ||A x_true||`` and
    ``delta_e`` the absolute noise norm.
    """

    A: object
    b: np.ndarray
    b_true: np.ndarray
    x_true: np.ndarray | None
    delta: float
    delta_e: float
    seed: int | None = None
    name: str = "problem"
    grid: ImageGrid | None = None
    rank_hint: int | None = None
    extras: dict = field(default_factory=dict)


def seed_streams(seed, names=("problem", "noise", "sketch", "truncation")):
    """Independent child seeds derived from one master seed.

    Changing the sketch seed never changes the noise draw, because each
    component reads from its own stream.
    """
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


def add_noise(b_true, delta, seed=None):
    """Add white Gaussian noise rescaled to norm exactly ``delta * ||b_true||``."""
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    b_true = np.asarray(b_true, dtype=float)
    if delta == 0:
        return b_true.copy(), 0.0
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(b_true.shape)
    delta_e = delta * np.linalg.norm(b_true)
    e *= delta_e / np.linalg.norm(e)
    return b_true + e, float(np.linalg.norm(e))


def synthetic_decay(m=1024, n=512, rho=1.01, delta=0.10, seed=0):
    """Dense ``A = U diag(rho^(1-i)) V^T`` with ``x_true = ones``.

    ``A`` is rescaled so that ``||A x_true|| = 1``; the unscaled singular
    values are kept in ``extras["singular_values"]`` and the applied factor
    in ``extras["scale"]``.
    """
    if m < n:
        raise ValueError(f"synthetic_decay needs m >= n, got m={m}, n={n}")
    if rho < 1:
        raise ValueError("rho must be at least 1")
    streams = seed_streams(seed)
    rng = np.random.default_rng(streams["problem"])
    U, _ = np.linalg.qr(rng.standard_normal((m, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    sigma = rho ** (1.0 - np.arange(1, n + 1))
    M = (U * sigma) @ V.T
    x_true = np.ones(n)
    scale = 1.0 / np.linalg.norm(M @ x_true)
    M *= scale
    b_true = M @ x_true
    b, delta_e = add_noise(b_true, delta, streams["noise"])
    return Problem(
        A=from_dense(M),
        b=b,
        b_true=b_true,
        x_true=x_true,
        delta=delta,
        delta_e=delta_e,
        seed=seed,
        name="synthetic",
        extras={"singular_values": sigma, "scale": scale, "matrix": M, "rho": rho},
    )


# modified Shepp-Logan (Toft): intensity, semi-axes a, b, center x0, y0, angle (deg)
SHEPP_LOGAN_ELLIPSES = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
])


def _pixel_centers(n):
    # row 0 is the top of the image (y = +1)
    t = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    X, Y = np.meshgrid(t, -t)
    return X, Y


def shepp_logan(n_pixels=64):
    """Modified Shepp-Logan phantom on ``[-1, 1]^2`` sampled at pixel centers.

    Ellipse intensities are summed; the result lies in ``[0, 1]``.
    """
    if n_pixels < 16:
        raise ValueError("phantom needs at least 16 pixels per side")
    X, Y = _pixel_centers(n_pixels)
    img = np.zeros((n_pixels, n_pixels))
    for A, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        c, s = math.cos(math.radians(phi)), math.sin(math.radians(phi))
        xr = (X - x0) * c + (Y - y0) * s
        yr = -(X - x0) * s + (Y - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += A
    return np.clip(img, 0.0, None)


def low_rank_scene(n_pixels=64):
    """Piecewise-smooth test image dominated by a few separable components.

    A smooth separable background, three rectangles (each rank one) and two
    Gaussian blobs (each rank one), plus a faint disk that adds a slowly
    decaying singular value tail.
    """
    n = n_pixels
    t = np.linspace(0.0, 1.0, n)
    img = 0.3 * np.outer(0.6 + 0.4 * np.sin(np.pi * t), 0.7 + 0.3 * np.cos(np.pi * t))
    for r0, r1, c0, c1, v in ((0.15, 0.45, 0.1, 0.7, 0.5), (0.55, 0.9, 0.2, 0.45, 0.35),
                              (0.6, 0.8, 0.55, 0.9, 0.6)):
        rows = ((t >= r0) & (t < r1)).astype(float)
        cols = ((t >= c0) & (t < c1)).astype(float)
        img += v * np.outer(rows, cols)
    for cr, cc, w, v in ((0.3, 0.8, 0.08, 0.4), (0.75, 0.35, 0.12, 0.3)):
        img += v * np.outer(np.exp(-0.5 * ((t - cr) / w) ** 2), np.exp(-0.5 * ((t - cc) / w) ** 2))
    R, C = np.meshgrid(t, t, indexing="ij")
    img += 0.05 * (((R - 0.5) ** 2 + (C - 0.5) ** 2) <= 0.15**2)
    return img


def default_rank(n_pixels):
    """Truncation rank for an ``n x n`` image: 30 at 512, never below 8."""
    return max(8, round(30 * n_pixels / 512))


def deblur_inpaint_problem(n_pixels=64, psf_variance=0.25, keep_fraction=0.8, delta=0.05,
                           rank_hint=None, seed=0):
    """Gaussian blur followed by random pixel subsampling of :func:`low_rank_scene`."""
    streams = seed_streams(seed)
    grid = ImageGrid(n_pixels, n_pixels)
    blur = gaussian_blur(grid, psf_variance)
    mask = subsample_mask(grid, keep_fraction, seed=streams["problem"])
    A = compose(mask, blur)
    x_true = grid.vec(low_rank_scene(n_pixels))
    b_true = A.forward(x_true)
    b, delta_e = add_noise(b_true, delta, streams["noise"])
    return Problem(
        A=A,
        b=b,
        b_true=b_true,
        x_true=x_true,
        delta=delta,
        delta_e=delta_e,
        seed=seed,
        name="deblur",
        grid=grid,
        rank_hint=rank_hint if rank_hint is not None else default_rank(n_pixels),
        extras={"mask": mask, "blur": blur},
    )


def ct_problem(n_pixels=64, n_angles=60, n_rays=96, delta=0.05, asymmetry=4e-2, seed=0):
    """Parallel-beam CT of the Shepp-Logan phantom with a perturbed backprojector."""
    streams = seed_streams(seed)
    grid = ImageGrid(n_pixels, n_pixels)
    projector = ct_parallel(grid, n_angles, n_rays)
    A = perturb_adjoint(projector, asymmetry, seed=streams["problem"])
    x_true = grid.vec(shepp_logan(n_pixels))
    b_true = A.forward(x_true)
    b, delta_e = add_noise(b_true, delta, streams["noise"])
    return Problem(
        A=A,
        b=b,
        b_true=b_true,
        x_true=x_true,
        delta=delta,
        delta_e=delta_e,
        seed=seed,
        name="ct",
        grid=grid,
        extras={"projector": projector, "n_angles": n_angles, "n_rays": n_rays,
                "asymmetry": asymmetry},
    )


# -- PGM (P5, 16-bit) -------------------------------------------------------

def write_pgm(path, image, vmin=None, vmax=None):
    """Write a 2-D array as a binary 16-bit PGM, linearly mapped to 0..65535.

    Returns the ``(vmin, vmax)`` used for the mapping.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    vmin = float(img.min()) if vmin is None else vmin
    vmax = float(img.max()) if vmax is None else vmax
    span = vmax - vmin if vmax > vmin else 1.0
    q = np.clip(np.rint((img - vmin) / span * 65535), 0, 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    return vmin, vmax


def read_pgm(path):
    """Read a binary PGM (8- or 16-bit); returns integer pixel values."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: magic {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)
