"""Moment estimates of the process noise from residues, and the Rayleigh baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RayleighNoise
from .residue import ResidueSet


@dataclass(frozen=True)
class MomentEstimates:
    mean: np.ndarray
    second_moment: np.ndarray
    cov: np.ndarray
    kappa: int

    @property
    def is_positive_definite(self):
        return bool(np.linalg.eigvalsh(self.cov)[0] > 0)

    def spd_cov(self):
        """Covariance with eigenvalues floored at 1e-8 * trace."""
        return nearest_spd(self.cov)


def nearest_spd(cov, floor=1e-8):
    cov = 0.5 * (np.asarray(cov, float) + np.asarray(cov, float).T)
    vals, vecs = np.linalg.eigh(cov)
    tr = abs(np.trace(cov))
    lo = floor * (tr if tr > 0 else 1.0)
    if vals[0] > lo:
        return cov
    vals = np.maximum(vals, lo)
    return (vecs * vals) @ vecs.T


def estimate_moments(residues: ResidueSet) -> MomentEstimates:
    """Moment-matching estimates from r[k] = w[k-1] + nu[k].

    The known transformed-noise mean is removed per step; the unbiased sample
    covariance of the centred residues minus the average transformed-noise
    covariance estimates the process-noise covariance.
    """
    if residues.kappa < 2:
        raise ValueError("need at least two residues")
    means, covs = residues.nu_params()
    centred = residues.samples - means
    mean = centred.mean(axis=0)
    sample_cov = np.atleast_2d(np.cov(centred, rowvar=False, ddof=1))
    nu_cov = covs[0] if residues.is_lti else covs.mean(axis=0)
    cov = sample_cov - nu_cov
    cov = 0.5 * (cov + cov.T)
    second = cov + np.outer(mean, mean)
    return MomentEstimates(mean=mean, second_moment=second, cov=cov, kappa=residues.kappa)


def rayleigh_objective(sigma2, m1, m2):
    return (m1 - np.sqrt(sigma2 * np.pi / 2)) ** 2 + (m2 - 2 * sigma2) ** 2


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, lo, hi, xtol=1e-12, maxiter=500):
    """Minimiser of a unimodal ``f`` on [lo, hi]."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if b - a <= xtol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return c if fc < fd else d


def rayleigh_mom(m1, m2):
    """Fit a Rayleigh scale to the first two raw moments.

    Minimises (m1 - sqrt(s pi/2))^2 + (m2 - 2 s)^2 over s = sigma^2 > 0 by
    golden-section search on log s within [1e-6, 1e6] * m2.

    Returns
    -------
    sigma2 : float
    density : RayleighNoise
    """
    m1 = float(np.squeeze(m1))
    m2 = float(np.squeeze(m2))
    if not m2 > 0:
        raise ValueError("second moment must be positive")
    lo, hi = np.log(1e-6 * m2), np.log(1e6 * m2)
    # absolute tolerance on log s is a relative tolerance on s
    log_s = golden_section(lambda ls: rayleigh_objective(np.exp(ls), m1, m2), lo, hi, xtol=1e-12)
    sigma2 = float(np.exp(log_s))
    return sigma2, RayleighNoise(np.sqrt(sigma2))
