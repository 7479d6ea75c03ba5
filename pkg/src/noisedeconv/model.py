"""Linear time-varying state-space models, noise families and simulation.

The model is

    x[k+1] = F[k] x[k] + G[k] u[k] + w[k]
    z[k]   = H[k] x[k] + v[k]

for k = 0..horizon.  Each of F, G, H is given either as a constant matrix, a
per-step table of shape (horizon + 1, rows, cols), or a vectorised callable
``f(ks) -> (len(ks), rows, cols)``.  Callables are evaluated lazily in chunks
so analytic laws over very long horizons never materialise every matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DimensionError, RankDeficiencyError

MatrixLaw = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]

RANK_RTOL = 1e-10
CHUNK = 1 << 16


def _as_steps(ks):
    return np.atleast_1d(np.asarray(ks, dtype=np.int64))


class _MatrixMap:
    """Step -> matrix lookup over one of the three supported representations."""

    def __init__(self, law, horizon, name):
        self.name = name
        self.horizon = horizon
        if callable(law):
            self._fn = law
            self.constant = False
            probe = np.asarray(law(np.array([0])), dtype=float)
            if probe.ndim != 3 or probe.shape[0] != 1:
                raise DimensionError(f"{name} law must return an array of shape (len(ks), rows, cols)")
            self.shape = probe.shape[1:]
            self._table = None
        else:
            arr = np.asarray(law, dtype=float)
            if arr.ndim == 0:
                arr = arr.reshape(1, 1)
            if arr.ndim == 2:
                self.constant = True
                self._matrix = arr
                self.shape = arr.shape
            elif arr.ndim == 3:
                if arr.shape[0] < horizon + 1:
                    raise DimensionError(
                        f"{name} table has {arr.shape[0]} steps, need {horizon + 1}")
                self.constant = False
                self._table = arr
                self._fn = None
                self.shape = arr.shape[1:]
            else:
                raise DimensionError(f"{name} must be a matrix, a step table or a callable")

    def __call__(self, ks):
        ks = _as_steps(ks)
        if self.constant:
            return np.broadcast_to(self._matrix, (len(ks),) + self.shape)
        if self._table is not None:
            return self._table[ks]
        return np.asarray(self._fn(ks), dtype=float)

    def matrix(self):
        return self._matrix


@dataclass(frozen=True)
class ModelSequence:
    """Known matrices of an LTV (or LTI) state-space model.

    Parameters
    ----------
    horizon : int
        Number of steps tau; states and measurements exist for k = 0..tau.
    F, G, H : array_like or callable
        Constant matrix, per-step table, or vectorised law ``f(ks)``.
    """

    horizon: int
    F: MatrixLaw
    G: MatrixLaw
    H: MatrixLaw
    _maps: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise DimensionError("horizon must be positive")
        maps = {name: _MatrixMap(getattr(self, name), int(self.horizon), name)
                for name in ("F", "G", "H")}
        nx = maps["F"].shape[0]
        if maps["F"].shape != (nx, nx):
            raise DimensionError(f"F must be square, got {maps['F'].shape}")
        if maps["G"].shape[0] != nx:
            raise DimensionError(f"G has {maps['G'].shape[0]} rows, expected {nx}")
        if maps["H"].shape[1] != nx:
            raise DimensionError(f"H has {maps['H'].shape[1]} columns, expected {nx}")
        object.__setattr__(self, "_maps", maps)

    @classmethod
    def constant(cls, F, G, H, horizon):
        return cls(horizon, np.atleast_2d(np.asarray(F, float)),
                   np.atleast_2d(np.asarray(G, float)), np.atleast_2d(np.asarray(H, float)))

    @property
    def nx(self):
        return self._maps["F"].shape[0]

    @property
    def nu(self):
        return self._maps["G"].shape[1]

    @property
    def nz(self):
        return self._maps["H"].shape[0]

    @property
    def is_lti(self):
        return all(m.constant for m in self._maps.values())

    def is_constant(self, name):
        return self._maps[name].constant

    def F_at(self, ks):
        return self._get("F", ks)

    def G_at(self, ks):
        return self._get("G", ks)

    def H_at(self, ks):
        return self._get("H", ks)

    def _get(self, name, ks):
        out = self._maps[name](ks)
        if np.ndim(ks) == 0:
            return out[0]
        return out


def _first_bad(mm, ks, expected):
    for k in ks:
        try:
            if mm(np.array([k])).shape[1:] != expected:
                return int(k)
        except Exception:
            return int(k)
    return int(ks[0])


@dataclass(frozen=True)
class ValidationReport:
    rank_ok: np.ndarray
    min_singular_value: float
    min_singular_step: int

    @property
    def ok(self):
        return bool(np.all(self.rank_ok))


def validate(model: ModelSequence, rtol=RANK_RTOL) -> ValidationReport:
    """Check dimensions and full column rank of every H[k].

    A step passes when its smallest singular value exceeds ``rtol`` times its
    largest.  Raises :class:`DimensionError` or :class:`RankDeficiencyError`
    naming the first offending step; otherwise returns the per-step report.
    """
    if model.nz < model.nx:
        raise DimensionError(f"n_z = {model.nz} < n_x = {model.nx}; H cannot have full column rank")
    steps = model.horizon + 1
    for name in ("F", "G", "H"):
        if model.is_constant(name):
            continue
        expected = model._maps[name].shape
        for start in range(0, steps, CHUNK):
            ks = np.arange(start, min(start + CHUNK, steps))
            block = model._maps[name](ks)
            if block.shape != (len(ks),) + expected:
                raise DimensionError(f"{name} at step {_first_bad(model._maps[name], ks, expected)} "
                                     f"does not have shape {expected}")

    if model.is_constant("H"):
        s = np.linalg.svd(model.H_at(0), compute_uv=False)
        ok = s[-1] > rtol * s[0]
        if not ok:
            raise RankDeficiencyError(0, s[-1])
        return ValidationReport(np.ones(steps, dtype=bool), float(s[-1]), 0)

    rank_ok = np.empty(steps, dtype=bool)
    smin, kmin = np.inf, 0
    for start in range(0, steps, CHUNK):
        ks = np.arange(start, min(start + CHUNK, steps))
        s = np.linalg.svd(model.H_at(ks), compute_uv=False)
        rank_ok[ks] = s[:, -1] > rtol * s[:, 0]
        j = int(np.argmin(s[:, -1]))
        if s[j, -1] < smin:
            smin, kmin = float(s[j, -1]), int(ks[j])
        if not rank_ok[ks].all():
            first = int(ks[np.argmin(rank_ok[ks])])
            raise RankDeficiencyError(first, s[first - start, -1])
    return ValidationReport(rank_ok, smin, kmin)


# --------------------------------------------------------------------------
# Noise families.  All share: dim, mean, cov, sample(rng, n), pdf(x).


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal density N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionError(f"mean {mean.shape} and cov {cov.shape} disagree")
        scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("covariance is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    def sample(self, rng, n):
        chol = np.linalg.cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ chol.T

    def logpdf(self, x):
        x = _as_points(x, self.dim)
        chol = np.linalg.cholesky(self.cov)
        dev = (x - self.mean).reshape(-1, self.dim)
        y = np.linalg.solve(chol, dev.T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out = -0.5 * (np.sum(y * y, axis=0) + self.dim * np.log(2 * np.pi) + logdet)
        return out.reshape(x.shape[:-1])

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cf(self, t):
        """Characteristic function E[exp(i t.x)] at points ``t`` of shape (..., dim)."""
        t = _as_points(t, self.dim)
        quad = np.einsum("...i,ij,...j->...", t, self.cov, t)
        return np.exp(1j * (t @ self.mean) - 0.5 * quad)


@dataclass(frozen=True)
class GaussianSumNoise:
    """Finite Gaussian mixture with weights summing to one."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ValueError("Gaussian-sum weights must be nonnegative and sum to 1")
        if not (len(w) == len(means) == len(covs)):
            raise DimensionError("weights, means and covs must have the same length")
        comps = tuple(GaussianDensity(m, c) for m, c in zip(means, covs))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", np.stack([c.cov for c in comps]))
        object.__setattr__(self, "_components", comps)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def mean(self):
        return self.weights @ self.means

    @property
    def cov(self):
        m = self.mean
        dev = self.means - m
        return (np.einsum("j,jab->ab", self.weights, self.covs)
                + np.einsum("j,ja,jb->ab", self.weights, dev, dev))

    def sample(self, rng, n):
        labels = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        chols = np.linalg.cholesky(self.covs)
        return self.means[labels] + np.einsum("nij,nj->ni", chols[labels], z)

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self._components))


@dataclass(frozen=True)
class RayleighNoise:
    """Scalar Rayleigh density with scale ``sigma``: p(w) = w/s^2 exp(-w^2 / 2 s^2), w >= 0."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Rayleigh scale must be positive")
        object.__setattr__(self, "sigma", float(self.sigma))

    dim = 1

    @property
    def mean(self):
        return np.array([self.sigma * np.sqrt(np.pi / 2)])

    @property
    def cov(self):
        return np.array([[(4 - np.pi) / 2 * self.sigma ** 2]])

    def sample(self, rng, n):
        # inverse CDF; 1 - U lies in (0, 1] so the log is finite
        u = 1.0 - rng.random(n)
        return (self.sigma * np.sqrt(-2.0 * np.log(u)))[:, None]

    def pdf(self, x):
        x = _as_points(x, 1)[..., 0]
        s2 = self.sigma ** 2
        return np.where(x >= 0, x / s2 * np.exp(-0.5 * x * x / s2), 0.0)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    x: np.ndarray  # (tau + 1, nx)
    z: np.ndarray  # (tau + 1, nz)
    u: np.ndarray  # (tau, nu)
    w: np.ndarray  # (tau, nx)
    v: np.ndarray  # (tau + 1, nz)


def _check_noise_dim(sampler, dim, what):
    if sampler is not None and sampler.dim != dim:
        raise DimensionError(f"{what} noise has dimension {sampler.dim}, expected {dim}")


def simulate(model: ModelSequence, x0, u, w_sampler, v_sampler, seed=None) -> Trajectory:
    """Simulate one trajectory of the model.

    Process noise is drawn first (``horizon`` draws) and measurement noise
    second (``horizon + 1`` draws) from ``numpy.random.default_rng(seed)``, so
    a fixed seed reproduces the logs bit for bit.  A sampler of ``None`` means
    that noise is identically zero.
    """
    tau, nx, nz = model.horizon, model.nx, model.nz
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (nx,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({nx},)")
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and model.nu == 1:
        u = u[:, None]
    if u.shape != (tau, model.nu):
        raise DimensionError(f"control has shape {u.shape}, expected ({tau}, {model.nu})")
    _check_noise_dim(w_sampler, nx, "process")
    _check_noise_dim(v_sampler, nz, "measurement")

    rng = np.random.default_rng(seed)
    w = np.zeros((tau, nx)) if w_sampler is None else np.asarray(w_sampler.sample(rng, tau), float)
    v = np.zeros((tau + 1, nz)) if v_sampler is None else np.asarray(v_sampler.sample(rng, tau + 1), float)

    x = np.empty((tau + 1, nx))
    x[0] = x0
    for start in range(0, tau, CHUNK):
        ks = np.arange(start, min(start + CHUNK, tau))
        drive = np.einsum("kij,kj->ki", model.G_at(ks), u[ks]) + w[ks]
        Fs = model.F_at(ks)
        if nx == 1:
            # scalar recursion in plain floats; ~20x faster than per-step matmul
            xc = float(x[start, 0])
            out = x[start + 1:ks[-1] + 2, 0]
            for j, (f, d) in enumerate(zip(Fs[:, 0, 0].tolist(), drive[:, 0].tolist())):
                xc = f * xc + d
                out[j] = xc
        else:
            xc = x[start]
            for j, k in enumerate(ks):
                xc = Fs[j] @ xc + drive[j]
                x[k + 1] = xc

    z = np.empty((tau + 1, nz))
    for start in range(0, tau + 1, CHUNK):
        ks = np.arange(start, min(start + CHUNK, tau + 1))
        z[ks] = np.einsum("kij,kj->ki", model.H_at(ks), x[ks]) + v[ks]
    return Trajectory(x=x, z=z, u=u, w=w, v=v)
