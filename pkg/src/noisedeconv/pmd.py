"""Point-mass densities: piecewise-constant densities on equidistant grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .kde import GridSpec, GriddedDensity


@dataclass(frozen=True)
class PointMassDensity:
    """Density constant on the hyper-rectangular cell around each grid point.

    Weights are renormalised on construction so that cell_volume * sum == 1.
    """

    grid: GridSpec
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(self.grid.shape)
        if np.any(w < 0):
            raise ValueError("point-mass weights must be nonnegative")
        total = self.grid.cell_volume * w.sum()
        if not total > 0:
            raise ValueError("point-mass density has zero mass")
        object.__setattr__(self, "weights", w / total)

    @classmethod
    def from_gridded(cls, density: GriddedDensity):
        return cls(density.grid, density.values)

    @property
    def cell_volume(self):
        return self.grid.cell_volume

    def to_gridded(self):
        return GriddedDensity(self.grid, self.weights)


def _as_pmd(p):
    if isinstance(p, PointMassDensity):
        return p
    if isinstance(p, GriddedDensity):
        return PointMassDensity.from_gridded(p)
    raise TypeError(f"expected a point-mass or gridded density, got {type(p).__name__}")


def moments(p):
    """Mean vector and covariance matrix of a point-mass density."""
    p = _as_pmd(p)
    pts = p.grid.coordinates()
    prob = p.cell_volume * p.weights.reshape(-1)
    mean = prob @ pts
    dev = pts - mean
    cov = (dev * prob[:, None]).T @ dev
    return mean, 0.5 * (cov + cov.T)


def sample(p, n, seed=None):
    """Draw ``n`` points: a cell with probability Delta * weight, then uniform in it.

    Draws have variance larger than :func:`moments` by spacing^2 / 12 per
    dimension (the within-cell uniform spread).
    """
    p = _as_pmd(p)
    rng = np.random.default_rng(seed)
    prob = p.cell_volume * p.weights.reshape(-1)
    prob = prob / prob.sum()
    cells = rng.choice(prob.size, size=n, p=prob)
    centres = p.grid.coordinates()[cells]
    jitter = rng.random((n, p.grid.dim)) - 0.5
    return centres + jitter * p.grid.spacing


def _values_on(truth, grid):
    if isinstance(truth, (PointMassDensity, GriddedDensity)):
        if not truth.grid.same_as(grid):
            raise GridMismatchError("estimate and truth live on different grids")
        return np.asarray(truth.weights if isinstance(truth, PointMassDensity) else truth.values)
    if hasattr(truth, "pdf"):
        return np.asarray(truth.pdf(grid.mesh()), dtype=float).reshape(grid.shape)
    if callable(truth):
        return np.asarray(truth(grid.mesh()), dtype=float).reshape(grid.shape)
    raise TypeError("truth must be a density on the same grid or expose pdf(points)")


def integral_error(estimate, truth) -> float:
    """L1 error Delta * sum |p_true(xi) - p_est(xi)| over the estimate's grid.

    ``truth`` may be a gridded/point-mass density on the same grid or any object
    with ``pdf(points)`` (evaluated analytically at the grid points).
    """
    est = _as_pmd(estimate)
    tv = _values_on(truth, est.grid)
    return float(est.cell_volume * np.abs(tv - est.weights).sum())
