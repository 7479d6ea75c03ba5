"""Characteristic functions on FFT grids and kernel density deconvolution.

A density sampled at xi_i = a + i h (per axis) has the discrete CF

    CF(t_j) = Delta * sum_i p(xi_i) exp(i t_j xi_i),   t_j = 2 pi j / (N h),

with j running over ``fftfreq`` order.  The factor exp(i t_j a) is the
grid-origin phase; with it applied CF values approximate the continuous CF, so
ratios of CFs of different densities on the same grid approximate the CF of the
deconvolved density and the inverse transform reads out on the same grid.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import DeconvolutionError, DimensionError, GridMismatchError
from .kde import (Bandwidth, GridSpec, GriddedDensity, default_grid, evaluate_kde,
                  gaussian_on_grid, gaussian_sum_on_grid, silverman_bandwidth)
from .model import GaussianDensity, ModelSequence
from .residue import ResidueSet, build_residue_set

log = logging.getLogger(__name__)

THREADS_ENV = "NOISEDECONV_THREADS"
# With epsilon = 0, frequencies whose (DC-normalised) denominator modulus is
# below this are treated as lost and set to zero instead of divided.
CF_FLOOR = 1e-6
NU_COVER_SD = 5.0


def fft_workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def frequency_axes(grid: GridSpec):
    return [2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.points, grid.spacing)]


def _origin_phase(grid, sign):
    phase = np.ones(grid.shape, dtype=complex)
    for axis, (t, a) in enumerate(zip(frequency_axes(grid), grid.lower)):
        shape = [1] * grid.dim
        shape[axis] = len(t)
        phase = phase * np.exp(sign * 1j * t * a).reshape(shape)
    return phase


@dataclass(frozen=True)
class CfGrid:
    """CF values on the DFT frequency lattice of ``grid`` (``fftfreq`` order).

    Values carry the grid-origin phase, i.e. approximate the continuous CF.
    """

    grid: GridSpec
    values: np.ndarray
    phase_convention: str = field(default="origin", compare=False)

    @property
    def dc(self):
        return self.values[(0,) * self.grid.dim]

    def frequencies(self):
        """Frequency vectors t_j, shape ``grid.shape + (dim,)``."""
        return np.stack(np.meshgrid(*frequency_axes(self.grid), indexing="ij"), axis=-1)


def cf_forward(density: GriddedDensity) -> CfGrid:
    """Discrete characteristic function of a gridded density."""
    grid = density.grid
    raw = scipy.fft.ifftn(density.values, workers=fft_workers()) * grid.size
    return CfGrid(grid, grid.cell_volume * raw * _origin_phase(grid, +1))


def cf_inverse(cf: CfGrid) -> np.ndarray:
    """Real density values on the grid from CF values (imaginary part dropped)."""
    grid = cf.grid
    out = scipy.fft.fftn(cf.values * _origin_phase(grid, -1), workers=fft_workers())
    return np.real(out) / (grid.size * grid.cell_volume)


def gaussian_cf(density: GaussianDensity, grid: GridSpec) -> CfGrid:
    """Analytic Gaussian CF on the frequency lattice of ``grid``."""
    if density.dim != grid.dim:
        raise DimensionError("density and grid dimensions disagree")
    t = np.stack(np.meshgrid(*frequency_axes(grid), indexing="ij"), axis=-1)
    return CfGrid(grid, density.cf(t))


def point_mass_cf(grid: GridSpec) -> CfGrid:
    """CF of a point mass at the origin (identically one)."""
    return CfGrid(grid, np.ones(grid.shape, dtype=complex))


@dataclass(frozen=True)
class DeconvConfig:
    bandwidth: Bandwidth
    epsilon: float
    grid: GridSpec

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("smoothness coefficient must be nonnegative")
        if self.bandwidth.dim != self.grid.dim:
            raise DimensionError("bandwidth and grid dimensions disagree")


def _to_cf(obj, grid):
    if isinstance(obj, CfGrid):
        if not obj.grid.same_as(grid):
            raise GridMismatchError("CF grid differs from the numerator grid")
        return obj
    if isinstance(obj, GriddedDensity):
        if not obj.grid.same_as(grid):
            raise GridMismatchError("denominator density lives on a different grid")
        return cf_forward(obj)
    if isinstance(obj, GaussianDensity):
        return gaussian_cf(obj, grid)
    raise TypeError(f"cannot take a characteristic function of {type(obj).__name__}")


def divide_cf(num: CfGrid, den: CfGrid, epsilon: float) -> CfGrid:
    """Regularised ratio num * conj(den) / (|den|^2 + epsilon) of DC-normalised CFs."""
    if not num.grid.same_as(den.grid):
        raise GridMismatchError("numerator and denominator CFs live on different grids")
    n_dc, d_dc = num.dc, den.dc
    if n_dc == 0 or d_dc == 0:
        raise DeconvolutionError("characteristic function vanishes at zero frequency")
    fn = num.values / n_dc
    fd = den.values / d_dc
    power = (fd * np.conj(fd)).real
    if epsilon > 0:
        ratio = fn * np.conj(fd) / (power + epsilon)
    else:
        keep = np.sqrt(power) > CF_FLOOR
        if not keep.any():
            raise DeconvolutionError("denominator CF is zero everywhere and epsilon = 0")
        ratio = np.zeros_like(fn)
        ratio[keep] = fn[keep] / fd[keep]
    return CfGrid(num.grid, ratio)


def _readout(ratio: CfGrid):
    """Inverse transform, clip negative ripple, normalise; also the clipped fraction."""
    raw = cf_inverse(ratio)
    total = float(raw.sum())
    negative = float(-raw[raw < 0].sum())
    positive = np.maximum(raw, 0.0)
    if not positive.sum() > 0:
        raise DeconvolutionError("deconvolved density has no positive mass")
    out = GriddedDensity(ratio.grid, positive).normalized()
    return out, (negative / abs(total) if total != 0 else np.inf)


def deconvolve(num: GriddedDensity, den, epsilon: float = 0.0, full_output=False):
    """Deconvolve density ``num`` by ``den``.

    Parameters
    ----------
    num : GriddedDensity
        Density of the observed variable (e.g. the residue KDE, pooled or summed).
    den : GriddedDensity, CfGrid or GaussianDensity
        Blurring density on the same grid, its CF, or an analytic Gaussian.
    epsilon : float
        Tikhonov smoothness coefficient applied to the DC-normalised CFs.
    full_output : bool
        Also return the clipped negative mass (fraction of the raw integral).

    Returns
    -------
    GriddedDensity, or (GriddedDensity, float) when ``full_output``.
    """
    if epsilon < 0:
        raise ValueError("smoothness coefficient must be nonnegative")
    num_cf = _to_cf(num, num.grid)
    den_cf = _to_cf(den, num.grid)
    out, clipped = _readout(divide_cf(num_cf, den_cf, epsilon))
    if full_output:
        return out, clipped
    return out


# --------------------------------------------------------------------------
# Pipeline


@dataclass
class KddResult:
    density: GriddedDensity
    residues: ResidueSet
    config: DeconvConfig
    mode: str
    clipped_mass: float
    timings: dict

    def report(self):
        return {
            "kappa": self.residues.kappa,
            "mode": self.mode,
            "bandwidth": self.config.bandwidth.matrix.tolist(),
            "epsilon": self.config.epsilon,
            "grid": {"lower": self.config.grid.lower.tolist(),
                     "upper": self.config.grid.upper.tolist(),
                     "points": list(self.config.grid.points)},
            "clipped_mass": self.clipped_mass,
            "timings": dict(self.timings),
        }


def nu_cover_box(residues: ResidueSet, width=NU_COVER_SD):
    """Box holding the bulk of every transformed-noise density."""
    sd = np.sqrt(np.max(np.diagonal(residues.nu_covs, axis1=1, axis2=2), axis=0))
    lo = residues.nu_means.min(axis=0) - width * sd
    hi = residues.nu_means.max(axis=0) + width * sd
    return lo, hi


def default_config(residues: ResidueSet, epsilon, bandwidth=None, points=None, with_nu=True):
    """Silverman bandwidth and a grid covering residues and transformed noises."""
    if bandwidth is None:
        bandwidth = silverman_bandwidth(residues.samples)
    cover = [nu_cover_box(residues)] if with_nu else []
    grid = default_grid(residues.samples, bandwidth, points=points, cover=cover)
    return DeconvConfig(bandwidth, float(epsilon), grid)


class _Stages:
    """Holds the grid quantities of a residue set; caches per-bandwidth KDE CFs."""

    def __init__(self, residues, grid, mode, with_nu=True):
        if mode not in ("lti", "ltv"):
            raise ValueError(f"mode must be 'lti' or 'ltv', got {mode!r}")
        if mode == "lti" and not residues.is_lti:
            raise ValueError("the pooled (LTI) path needs time-invariant transformed noise")
        self.residues = residues
        self.grid = grid
        self.mode = mode
        self.timings = {}
        t0 = time.perf_counter()
        if not with_nu:
            self.den_cf = point_mass_cf(grid)
        elif mode == "lti":
            self.den_cf = cf_forward(gaussian_on_grid(residues.nu_density(0), grid))
        else:
            means, covs = residues.nu_params()
            self.den_cf = cf_forward(gaussian_sum_on_grid(means, covs, grid))
        self.timings["nu_grid"] = time.perf_counter() - t0
        self._num = {}

    def numerator(self, bandwidth: Bandwidth):
        key = bandwidth.matrix.tobytes()
        if key not in self._num:
            t0 = time.perf_counter()
            # pooled KDE (LTI) or the raw per-sample sum (LTV); kappa cancels
            kd = evaluate_kde(self.residues.samples, bandwidth, self.grid,
                              normalized=self.mode == "lti")
            self._num[key] = cf_forward(kd)
            self.timings["kde"] = self.timings.get("kde", 0.0) + time.perf_counter() - t0
        return self._num[key]

    def run(self, bandwidth, epsilon):
        t0 = time.perf_counter()
        out = _readout(divide_cf(self.numerator(bandwidth), self.den_cf, epsilon))
        self.timings["deconvolve"] = self.timings.get("deconvolve", 0.0) + time.perf_counter() - t0
        return out


def kdd_from_residues(residues: ResidueSet, config: DeconvConfig, mode=None, with_nu=True) -> KddResult:
    """Deconvolution stages (KDE, transformed-noise grid, CFs, division) for a residue set."""
    mode = mode or ("lti" if residues.is_lti else "ltv")
    stages = _Stages(residues, config.grid, mode, with_nu=with_nu)
    dens, clipped = stages.run(config.bandwidth, config.epsilon)
    return KddResult(dens, residues, config, mode, clipped, stages.timings)


def kdd_pipeline(model: ModelSequence, z, u, v_density, config=None, mode=None,
                 epsilon=1e-3, stride=2, offset=1) -> KddResult:
    """Estimate the process-noise density from measurement and control logs.

    Parameters
    ----------
    model : ModelSequence
    z, u : array_like
        Measurements for k = 0..tau and controls for k = 0..tau-1.
    v_density : GaussianDensity or None
        Known measurement-noise density; None means noise-free measurements.
    config : DeconvConfig, optional
        Bandwidth, smoothness coefficient and grid.  By default the Silverman
        bandwidth, ``epsilon`` and the default grid are used.
    mode : {"lti", "ltv"}, optional
        Pooled-density path or per-sample-sum path; defaults to the model type.
    """
    t0 = time.perf_counter()
    residues = build_residue_set(model, z, u, v_density, stride, offset)
    with_nu = v_density is not None
    t_res = time.perf_counter() - t0
    if config is None:
        config = default_config(residues, epsilon, with_nu=with_nu)
    result = kdd_from_residues(residues, config, mode=mode, with_nu=with_nu)
    result.timings["residues"] = t_res
    log.debug("kdd run: kappa=%d eps=%g clipped=%.3g", residues.kappa, config.epsilon,
              result.clipped_mass)
    return result
