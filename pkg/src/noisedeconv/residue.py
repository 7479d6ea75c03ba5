"""Measurement-difference residues and the transformed measurement noise.

For k >= 1 the one-step measurement prediction is

    zhat[k] = H[k] F[k-1] Hp[k-1] z[k-1] + H[k] G[k-1] u[k-1],

with Hp the left pseudoinverse of H.  The residue r[k] = Hp[k] (z[k] - zhat[k])
equals w[k-1] + nu[k], where nu[k] = Hp[k] v[k] - F[k-1] Hp[k-1] v[k-1] has a
density known from the measurement-noise density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IndependenceGapError, RankDeficiencyError, UnsupportedFamilyError
from .model import CHUNK, RANK_RTOL, GaussianDensity, ModelSequence


def pseudoinverse(H):
    """Left pseudoinverse (H^T H)^{-1} H^T of a matrix or a stack of matrices.

    Computed from a reduced QR factorisation (Hp = R^{-1} Q^T) rather than by
    forming H^T H.
    """
    H = np.asarray(H, dtype=float)
    single = H.ndim == 2
    if single:
        H = H[None]
    q, r = np.linalg.qr(H, mode="reduced")
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    scale = np.max(diag, axis=-1, keepdims=True)
    bad = np.any(diag <= RANK_RTOL * scale, axis=-1)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise RankDeficiencyError(j, float(np.min(diag[j])))
    hp = np.linalg.solve(r, np.swapaxes(q, -1, -2))
    return hp[0] if single else hp


class _PinvCache:
    """Pseudoinverses by step, computed once when H is constant."""

    def __init__(self, model):
        self.model = model
        self._const = pseudoinverse(model.H_at(0)) if model.is_constant("H") else None

    def __call__(self, ks):
        ks = np.atleast_1d(ks)
        if self._const is not None:
            return np.broadcast_to(self._const, (len(ks),) + self._const.shape)
        try:
            return pseudoinverse(self.model.H_at(ks))
        except RankDeficiencyError as exc:
            raise RankDeficiencyError(int(ks[exc.step]), exc.singular_value) from None


def predict_measurement(model: ModelSequence, z_prev, u_prev, k: int):
    """One-step measurement prediction zhat[k] from z[k-1] and u[k-1]."""
    if k < 1:
        raise ValueError("prediction needs k >= 1")
    z_prev = np.atleast_1d(np.asarray(z_prev, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    if z_prev.shape != (model.nz,) or u_prev.shape != (model.nu,):
        raise DimensionError("z_prev / u_prev do not match the model dimensions")
    Hk = model.H_at(k)
    hp_prev = pseudoinverse(model.H_at(k - 1))
    return Hk @ (model.F_at(k - 1) @ (hp_prev @ z_prev)) + Hk @ (model.G_at(k - 1) @ u_prev)


def _check_logs(model, z, u):
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if u.ndim == 1:
        u = u[:, None]
    tau = model.horizon
    if z.shape != (tau + 1, model.nz):
        raise DimensionError(f"measurements have shape {z.shape}, expected ({tau + 1}, {model.nz})")
    if u.shape[0] < tau or u.shape[1] != model.nu:
        raise DimensionError(f"controls have shape {u.shape}, expected ({tau}, {model.nu})")
    return z, u[:tau]


def compute_residues(model: ModelSequence, z, u) -> np.ndarray:
    """Residues r[1..tau] as an array of shape (tau, nx); row j holds r[j+1]."""
    z, u = _check_logs(model, z, u)
    tau = model.horizon
    pinv = _PinvCache(model)
    out = np.empty((tau, model.nx))
    for start in range(1, tau + 1, CHUNK):
        ks = np.arange(start, min(start + CHUNK, tau + 1))
        hp_prev = pinv(ks - 1)
        hp = pinv(ks)
        state_prev = np.einsum("kij,kj->ki", hp_prev, z[ks - 1])
        pred_state = (np.einsum("kij,kj->ki", model.F_at(ks - 1), state_prev)
                      + np.einsum("kij,kj->ki", model.G_at(ks - 1), u[ks - 1]))
        # Hp[k] (z[k] - H[k] s) == Hp[k] z[k] - s exactly since Hp H = I
        zhat = np.einsum("kij,kj->ki", model.H_at(ks), pred_state)
        out[ks - 1] = np.einsum("kij,kj->ki", hp, z[ks] - zhat)
    return out


def subsample(residues, stride: int = 2, offset: int = 1):
    """Select every ``stride``-th residue starting at step ``offset``.

    ``residues`` is the (tau, nx) array from :func:`compute_residues`.
    Returns ``(indices, samples)`` where indices are time steps k.
    """
    if stride < 2:
        raise IndependenceGapError(
            f"stride {stride} < 2: consecutive residues share a measurement-noise term")
    residues = np.asarray(residues)
    tau = residues.shape[0]
    first = max(int(offset), 1)
    first += (-(first - offset)) % stride
    indices = np.arange(first, tau + 1, stride, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("subsampling selects no residues")
    return indices, residues[indices - 1]


def _nu_moments(model, pinv, v_density, ks):
    if not isinstance(v_density, GaussianDensity):
        raise UnsupportedFamilyError(
            f"transformed noise is only available for Gaussian measurement noise, got {type(v_density).__name__}")
    if v_density.dim != model.nz:
        raise DimensionError(f"measurement noise has dimension {v_density.dim}, expected {model.nz}")
    ks = np.atleast_1d(ks)
    if np.any(ks < 1):
        raise ValueError("transformed noise is defined for k >= 1")
    a = pinv(ks)
    b = np.einsum("kij,kjl->kil", model.F_at(ks - 1), pinv(ks - 1))
    mean = np.einsum("kij,j->ki", a - b, v_density.mean)
    R = v_density.cov
    cov = (np.einsum("kij,jl,kml->kim", a, R, a) + np.einsum("kij,jl,kml->kim", b, R, b))
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return mean, cov


def nu_density(model: ModelSequence, v_density: GaussianDensity, k: int) -> GaussianDensity:
    """Density of nu[k] = Hp[k] v[k] - F[k-1] Hp[k-1] v[k-1] for Gaussian v."""
    mean, cov = _nu_moments(model, _PinvCache(model), v_density, np.array([k]))
    return GaussianDensity(mean[0], cov[0])


@dataclass(frozen=True)
class ResidueSet:
    """Subsampled residues with the moments of their transformed noises.

    ``nu_means`` / ``nu_covs`` have one row per selected step, or a single row
    when ``is_lti`` (all rows would be equal).
    """

    indices: np.ndarray
    samples: np.ndarray
    nu_means: np.ndarray
    nu_covs: np.ndarray
    is_lti: bool

    def __post_init__(self):
        if len(self.indices) < 2:
            raise ValueError("a residue set needs at least two samples")
        if np.any(np.diff(self.indices) < 2):
            raise IndependenceGapError("residue indices must be at least two steps apart")

    @property
    def kappa(self):
        return len(self.indices)

    @property
    def dim(self):
        return self.samples.shape[1]

    def nu_density(self, i=0) -> GaussianDensity:
        j = 0 if self.is_lti else i
        return GaussianDensity(self.nu_means[j], self.nu_covs[j])

    def nu_params(self):
        """Per-sample (means, covs), broadcast to kappa rows."""
        if self.is_lti:
            return (np.broadcast_to(self.nu_means[0], self.samples.shape),
                    np.broadcast_to(self.nu_covs[0], (self.kappa,) + self.nu_covs.shape[1:]))
        return self.nu_means, self.nu_covs


def build_residue_set(model: ModelSequence, z, u, v_density: GaussianDensity,
                      stride=2, offset=1) -> ResidueSet:
    """Residues, subsampling and transformed-noise moments in one call.

    ``v_density=None`` declares noise-free measurements; the transformed noise
    is then a point mass at zero (zero mean and covariance rows).
    """
    residues = compute_residues(model, z, u)
    indices, samples = subsample(residues, stride, offset)
    nx = model.nx
    if v_density is None:
        n = 1 if model.is_lti else len(indices)
        return ResidueSet(indices=indices, samples=samples, nu_means=np.zeros((n, nx)),
                          nu_covs=np.zeros((n, nx, nx)), is_lti=model.is_lti)
    pinv = _PinvCache(model)
    if model.is_lti:
        mean, cov = _nu_moments(model, pinv, v_density, indices[:1])
    else:
        means, covs = [], []
        for start in range(0, len(indices), CHUNK):
            m, c = _nu_moments(model, pinv, v_density, indices[start:start + CHUNK])
            means.append(m)
            covs.append(c)
        mean, cov = np.concatenate(means), np.concatenate(covs)
    return ResidueSet(indices=indices, samples=samples, nu_means=mean, nu_covs=cov,
                      is_lti=model.is_lti)
