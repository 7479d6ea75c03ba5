"""Gaussian kernel density estimates on equidistant grids."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateBandwidthError, DimensionError, GridMismatchError
from .model import GaussianDensity

BINNED_THRESHOLD = 10_000
DEFAULT_POINTS = {1: 1024, 2: 256, 3: 64}
_MAX_DIM = 3


@dataclass(frozen=True)
class Bandwidth:
    """Symmetric positive-definite kernel smoothing matrix B."""

    matrix: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if B.shape[0] != B.shape[1]:
            raise DegenerateBandwidthError(f"bandwidth must be square, got {B.shape}")
        if np.max(np.abs(B - B.T)) > 1e-12 * max(np.max(np.abs(B)), 1e-300):
            raise DegenerateBandwidthError("bandwidth is not symmetric")
        B = 0.5 * (B + B.T)
        if not np.all(np.isfinite(B)) or np.linalg.eigvalsh(B)[0] <= 0:
            raise DegenerateBandwidthError("bandwidth is not positive definite")
        object.__setattr__(self, "matrix", B)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def scaled(self, factor):
        return Bandwidth(self.matrix * float(factor))


@dataclass(frozen=True)
class GridSpec:
    """Equidistant tensor grid; points are ordered row-major (last axis fastest)."""

    lower: np.ndarray
    upper: np.ndarray
    points: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        pts = np.atleast_1d(np.asarray(self.points, dtype=int))
        if pts.size == 1 and lo.size > 1:
            pts = np.repeat(pts, lo.size)
        if not (lo.shape == hi.shape == pts.shape) or lo.ndim != 1:
            raise DimensionError("grid bounds and point counts must have one entry per dimension")
        if np.any(hi <= lo):
            raise ValueError("grid upper bound must exceed lower bound in every dimension")
        if np.any(pts < 8):
            raise ValueError("grid needs at least 8 points per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points", tuple(int(p) for p in pts))

    @property
    def dim(self):
        return len(self.points)

    @property
    def shape(self):
        return self.points

    @property
    def size(self):
        return int(np.prod(self.points))

    @property
    def spacing(self):
        return (self.upper - self.lower) / (np.asarray(self.points) - 1)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.points)]

    def mesh(self):
        """Coordinates of every grid point, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def coordinates(self):
        """Ordered point list, shape (size, dim)."""
        return self.mesh().reshape(-1, self.dim)

    def same_as(self, other):
        return (self.points == other.points and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))


@dataclass(frozen=True)
class GriddedDensity:
    """Nonnegative density values at the points of a grid (array of ``grid.shape``)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise DimensionError(f"{vals.size} values for a grid of {self.grid.size} points")
        vals = vals.reshape(self.grid.shape)
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", vals)

    def mass(self):
        return self.grid.cell_volume * float(self.values.sum())

    def normalized(self):
        m = self.mass()
        if not m > 0:
            raise ValueError("cannot normalise a density with zero mass")
        return GriddedDensity(self.grid, self.values / m)

    def check_grid(self, other):
        if not self.grid.same_as(other.grid):
            raise GridMismatchError("densities live on different grids")


def _as_samples(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionError("samples must have shape (n,) or (n, dim)")
    return x


def silverman_bandwidth(samples) -> Bandwidth:
    """Diagonal rule-of-thumb bandwidth (4 / ((d + 2) n))^(2 / (d + 4)) * s_d^2."""
    x = _as_samples(samples)
    n, d = x.shape
    if n < 2:
        raise DegenerateBandwidthError("need at least two samples")
    var = np.var(x, axis=0, ddof=1)
    if np.any(var <= 0):
        raise DegenerateBandwidthError("samples have zero variance in some dimension")
    factor = (4.0 / ((d + 2) * n)) ** (2.0 / (d + 4))
    return Bandwidth(np.diag(factor * var))


def default_grid(samples, bandwidth: Bandwidth, points=None, cover=()) -> GridSpec:
    """Grid spanning the samples plus four kernel standard deviations each side.

    ``cover`` is an optional sequence of (lower, upper) boxes the grid must also
    enclose, e.g. the bulk of the transformed-noise densities.
    """
    x = _as_samples(samples)
    d = x.shape[1]
    if d > _MAX_DIM:
        raise DimensionError(f"grids above {_MAX_DIM} dimensions are not supported")
    pad = 4.0 * np.sqrt(np.max(np.diag(bandwidth.matrix)))
    lo = x.min(axis=0) - pad
    hi = x.max(axis=0) + pad
    for blo, bhi in cover:
        lo = np.minimum(lo, blo)
        hi = np.maximum(hi, bhi)
    if points is None:
        points = DEFAULT_POINTS[d]
    return GridSpec(lo, hi, points)


def _kernel_on_lags(B, grid):
    """Gaussian kernel N(0, B) at all lattice offsets -(n-1)..(n-1) per axis."""
    h = grid.spacing
    lag_axes = [np.arange(-(n - 1), n) * hd for n, hd in zip(grid.points, h)]
    mesh = np.stack(np.meshgrid(*lag_axes, indexing="ij"), axis=-1)
    return GaussianDensity(np.zeros(grid.dim), B).pdf(mesh)


def _linear_binning(x, grid):
    """Distribute unit mass per sample onto the 2^d surrounding nodes."""
    pos = (x - grid.lower) / grid.spacing
    shape = np.asarray(grid.points)
    inside = np.all((pos >= 0) & (pos <= shape - 1), axis=1)
    if not inside.all():
        warnings.warn(f"{(~inside).sum()} samples fall outside the grid and are ignored",
                      RuntimeWarning, stacklevel=3)
        pos = pos[inside]
    base = np.minimum(np.floor(pos).astype(np.int64), shape - 2)
    frac = pos - base
    counts = np.zeros(grid.size)
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(grid.dim)])
    for corner in product((0, 1), repeat=grid.dim):
        c = np.asarray(corner)
        weight = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        flat = (base + c) @ strides
        counts += np.bincount(flat, weights=weight, minlength=grid.size)
    return counts.reshape(grid.shape)


def _kde_direct_separable(x, B, grid):
    # diagonal B: the kernel factorises over axes, sum_i prod_d phi_d = contraction of per-axis tables
    sd = np.sqrt(np.diag(B))
    tables = [np.exp(-0.5 * ((ax[:, None] - x[None, :, d]) / sd[d]) ** 2) / (np.sqrt(2 * np.pi) * sd[d])
              for d, ax in enumerate(grid.axes)]
    if grid.dim == 1:
        return tables[0].sum(axis=1)
    if grid.dim == 2:
        return tables[0] @ tables[1].T
    letters = "abcdefgh"[:grid.dim]
    return np.einsum(",".join(f"{c}n" for c in letters) + "->" + letters, *tables)


def _kde_direct(x, B, grid):
    if np.count_nonzero(B - np.diag(np.diag(B))) == 0:
        out = np.zeros(grid.shape)
        step = max(1, 2_000_000 // max(max(grid.points), 1))
        for start in range(0, len(x), step):
            out += _kde_direct_separable(x[start:start + step], B, grid)
        return out
    pts = grid.coordinates()
    chol = np.linalg.cholesky(B)
    inv = np.linalg.inv(chol)
    norm = 1.0 / (np.sqrt((2 * np.pi) ** grid.dim) * np.prod(np.diag(chol)))
    px = pts @ inv.T
    sx = x @ inv.T
    out = np.zeros(len(pts))
    step = max(1, 4_000_000 // max(len(pts), 1))
    for start in range(0, len(sx), step):
        blk = sx[start:start + step]
        d2 = (np.sum(px * px, axis=1)[:, None] - 2.0 * px @ blk.T
              + np.sum(blk * blk, axis=1)[None, :])
        out += np.exp(-0.5 * np.maximum(d2, 0.0)).sum(axis=1)
    return (norm * out).reshape(grid.shape)


def _kde_binned(x, B, grid):
    counts = _linear_binning(x, grid)
    kernel = _kernel_on_lags(B, grid)
    sm = fftconvolve(counts, kernel, mode="same")
    return np.maximum(sm, 0.0)


def evaluate_kde(samples, bandwidth: Bandwidth, grid: GridSpec, normalized=True, method="auto"):
    """Evaluate the Gaussian-kernel KDE of ``samples`` on ``grid``.

    Parameters
    ----------
    samples : array_like, shape (n,) or (n, dim)
    bandwidth : Bandwidth
    grid : GridSpec
    normalized : bool
        If True the 1/n-averaged density is returned; otherwise the raw sum of
        the n per-sample kernels (n times larger).
    method : {"auto", "direct", "binned"}
        "auto" uses linear binning plus FFT convolution above 10^4 samples.

    Returns
    -------
    GriddedDensity
    """
    x = _as_samples(samples)
    if x.shape[1] != grid.dim or bandwidth.dim != grid.dim:
        raise DimensionError("samples, bandwidth and grid dimensions disagree")
    if method == "auto":
        method = "binned" if len(x) > BINNED_THRESHOLD else "direct"
    if method == "direct":
        lo_ok = np.all(x.min(axis=0) >= grid.lower)
        hi_ok = np.all(x.max(axis=0) <= grid.upper)
        if not (lo_ok and hi_ok):
            warnings.warn("grid does not cover the sample range", RuntimeWarning, stacklevel=2)
        values = _kde_direct(x, bandwidth.matrix, grid)
    elif method == "binned":
        values = _kde_binned(x, bandwidth.matrix, grid)
    else:
        raise ValueError(f"unknown KDE method {method!r}")
    if normalized:
        values = values / len(x)
    return GriddedDensity(grid, values)


def gaussian_on_grid(density, grid: GridSpec) -> GriddedDensity:
    """Exact Gaussian pdf values at the grid points."""
    if density.dim != grid.dim:
        raise DimensionError("density and grid dimensions disagree")
    return GriddedDensity(grid, density.pdf(grid.mesh()))


def gaussian_sum_on_grid(means, covs, grid: GridSpec) -> GriddedDensity:
    """Pointwise sum of the pdfs N(means[k], covs[k]) over all k.

    Repeated parameter pairs are evaluated once and multiplied by their count,
    so an LTI set of kappa identical densities yields exactly kappa times one
    evaluation.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    if covs.ndim == 1:
        covs = covs[:, None, None]
    d = grid.dim
    if means.shape[1] != d or covs.shape[1:] != (d, d):
        raise DimensionError("density and grid dimensions disagree")
    params = np.concatenate([means, covs.reshape(len(covs), -1)], axis=1)
    uniq, counts = np.unique(params, axis=0, return_counts=True)
    mu = uniq[:, :d]
    sig = uniq[:, d:].reshape(-1, d, d)
    if len(uniq) == 1:
        g = GaussianDensity(mu[0], sig[0])
        return GriddedDensity(grid, counts[0] * g.pdf(grid.mesh()))

    pts = grid.coordinates()
    chol = np.linalg.cholesky(sig)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    coef = counts * np.exp(-0.5 * (logdet + d * np.log(2 * np.pi)))
    prec = np.linalg.inv(sig)
    out = np.zeros(len(pts))
    step = max(1, 2_000_000 // len(pts))
    if d == 1:
        x = pts[:, 0]
        for start in range(0, len(uniq), step):
            sl = slice(start, start + step)
            dev = x[:, None] - mu[sl, 0][None, :]
            out += np.exp(-0.5 * dev * dev * prec[sl, 0, 0][None, :]) @ coef[sl]
    else:
        for start in range(0, len(uniq), step):
            sl = slice(start, start + step)
            dev = pts[:, None, :] - mu[sl][None, :, :]
            quad = np.einsum("nki,kij,nkj->nk", dev, prec[sl], dev)
            out += np.exp(-0.5 * quad) @ coef[sl]
    return GriddedDensity(grid, out.reshape(grid.shape))
