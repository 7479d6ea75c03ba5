"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line, printed in the terminal summary (see
conftest.py) and immediately when run with ``-s``.  Tolerances are fixed
constants below.
"""

import time

import numpy as np
import pytest
from scipy.stats import norm

from noisedeconv.cli import run_simulate
from noisedeconv.config import bundled_config_path, load_config
from noisedeconv.deconv import deconvolve
from noisedeconv.experiments import lti_2d_experiment, scalar_ltv_experiment
from noisedeconv.kde import GridSpec, default_grid, evaluate_kde, gaussian_on_grid, silverman_bandwidth
from noisedeconv.model import GaussianDensity, simulate
from noisedeconv.moments import estimate_moments
from noisedeconv.pmd import PointMassDensity, integral_error, moments
from noisedeconv.residue import build_residue_set, compute_residues
from noisedeconv.tuning import covariance_distance

# criterion tolerances
RESIDUE_TOL, RESIDUE_SECONDS = 1e-10, 5.0
ORACLE_TOL, ORACLE_SECONDS = 1e-2, 10.0
FUSION_TOL, FUSION_SECONDS = 1e-12, 1.0
SCALAR_FULL_BAND, SCALAR_DESK_MAX, SCALAR_DESK_SECONDS = (0.03, 0.12), 0.15, 60.0
MOM_FULL_BAND, MOM_DESK_MAX = (0.0, 0.01), 0.02
LTI_FULL_BAND, LTI_DESK_MAX, LTI_DESK_SECONDS = (0.12, 0.30), 0.45, 300.0
MDM_SE_BAND = 3.0
METRIC_TOL = 1e-9
KDE_TOL = 1e-4
PMD_MIN_ORDER = 1.7

Q_SCALAR = (4 - np.pi) / 2 * 4.0
Q_2D = np.array([[6.5, -3.0], [-3.0, 6.0]])
SIGMA_NU_2D = np.array([[4.0, -2.0], [-2.0, 4.0]])

RESULTS = []


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def noise_sum_oracle(model, tr):
    ks = np.arange(1, model.horizon + 1)
    Hp = np.linalg.pinv(model.H_at(np.arange(model.horizon + 1)))
    return (tr.w + np.einsum("kij,kj->ki", Hp[ks], tr.v[ks])
            - np.einsum("kij,kjl,kl->ki", model.F_at(ks - 1), Hp[ks - 1], tr.v[ks - 1]))


def test_criterion_01_residue_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for ex in (scalar_ltv_experiment(1000), lti_2d_experiment(1000)):
        for seed in range(50):
            tr = simulate(ex.model, ex.x0, ex.u, ex.w_true, ex.v_density, seed=seed)
            r = compute_residues(ex.model, tr.z, tr.u)
            worst = max(worst, float(np.max(np.abs(r - noise_sum_oracle(ex.model, tr)))))
    dt = time.perf_counter() - t0
    ok = worst < RESIDUE_TOL and dt < RESIDUE_SECONDS
    record(1, ok, f"max |r - (w + nu)| = {worst:.2e} (< {RESIDUE_TOL:g}), {dt:.2f} s (< {RESIDUE_SECONDS:g} s)")
    assert ok


def test_criterion_02_gaussian_oracle():
    t0 = time.perf_counter()
    errs = []
    cases = [(np.array([0.0]), np.array([[Q_SCALAR]]), np.array([[1.0]]), 1024),
             (np.zeros(2), Q_2D, SIGMA_NU_2D, 256)]
    for mw, Q, S, n in cases:
        sd = np.sqrt(np.linalg.eigvalsh(Q + S).max())
        g = GridSpec(mw - 8 * sd, mw + 8 * sd, n)
        r = gaussian_on_grid(GaussianDensity(mw, Q + S), g)
        nu = gaussian_on_grid(GaussianDensity(np.zeros(len(mw)), S), g)
        errs.append(integral_error(deconvolve(r, nu, 0.0), GaussianDensity(mw, Q)))
    dt = time.perf_counter() - t0
    ok = max(errs) < ORACLE_TOL and dt < ORACLE_SECONDS
    record(2, ok, f"integral error 1-D {errs[0]:.2e}, 2-D {errs[1]:.2e} (< {ORACLE_TOL:g}), "
                  f"{dt:.2f} s (< {ORACLE_SECONDS:g} s)")
    assert ok


def test_criterion_03_fusion_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    kappa = 50
    w = GaussianDensity([0.4, -0.7], Q_2D / 8)
    nus = []
    for k in range(kappa):
        A = rng.normal(size=(2, 2))
        nus.append(GaussianDensity(rng.normal(size=2), A @ A.T + (0.2 + np.sin(k) ** 2) * np.eye(2)))
    t = rng.uniform(-2, 2, size=(100, 2))
    num = sum(w.cf(t) * nu.cf(t) for nu in nus)  # CF of r_k is CF_w * CF_nu_k
    den = sum(nu.cf(t) for nu in nus)
    err = float(np.max(np.abs(num / den - w.cf(t))))
    dt = time.perf_counter() - t0
    ok = err < FUSION_TOL and dt < FUSION_SECONDS
    record(3, ok, f"max |sum CF_r / sum CF_nu - CF_w| = {err:.2e} (< {FUSION_TOL:g}), {dt:.3f} s")
    assert ok


_RUNS = {}


def experiment_run(name, tau, tmp_path_factory):
    key = (name, tau)
    if key not in _RUNS:
        out = tmp_path_factory.mktemp(f"{name}_{tau}")
        cfg = load_config(bundled_config_path(name)).with_overrides(tau=tau, out=out, seed=0)
        t0 = time.perf_counter()
        rep = run_simulate(cfg)
        _RUNS[key] = (rep, time.perf_counter() - t0)
    return _RUNS[key]


def test_criterion_04_scalar_ltv(tmp_path_factory):
    desk, dt = experiment_run("scalar_ltv", 10**5, tmp_path_factory)
    full, dt_full = experiment_run("scalar_ltv", 10**6, tmp_path_factory)
    lo, hi = SCALAR_FULL_BAND
    ok = (lo <= full.integral_error <= hi and desk.integral_error < SCALAR_DESK_MAX
          and dt < SCALAR_DESK_SECONDS)
    record(4, ok, f"KDD error full {full.integral_error:.4f} in [{lo}, {hi}] ({dt_full:.1f} s), "
                  f"desk {desk.integral_error:.4f} < {SCALAR_DESK_MAX} ({dt:.1f} s < {SCALAR_DESK_SECONDS:g} s)")
    assert ok


def test_criterion_05_rayleigh_mom(tmp_path_factory):
    desk, _ = experiment_run("scalar_ltv", 10**5, tmp_path_factory)
    full, _ = experiment_run("scalar_ltv", 10**6, tmp_path_factory)
    ef, ed = full.baseline["integral_error"], desk.baseline["integral_error"]
    lo, hi = MOM_FULL_BAND
    ok = lo <= ef <= hi and ed < MOM_DESK_MAX
    record(5, ok, f"MoM error full {ef:.5f} in [{lo}, {hi}], desk {ed:.5f} < {MOM_DESK_MAX}")
    assert ok


def test_criterion_06_lti_2d(tmp_path_factory):
    desk, dt = experiment_run("lti_2d", 10**5, tmp_path_factory)
    full, dt_full = experiment_run("lti_2d", 10**6, tmp_path_factory)
    lo, hi = LTI_FULL_BAND
    ok = (lo <= full.integral_error <= hi and desk.integral_error < LTI_DESK_MAX
          and dt < LTI_DESK_SECONDS)
    record(6, ok, f"KDD error full {full.integral_error:.4f} in [{lo}, {hi}] ({dt_full:.1f} s, "
                  f"eps* {full.epsilon:.2g}), desk {desk.integral_error:.4f} < {LTI_DESK_MAX} ({dt:.1f} s)")
    assert ok


def test_criterion_07_mdm_unbiased():
    details, ok = [], True
    for ex, Q in ((scalar_ltv_experiment(10**4), np.array([[Q_SCALAR]])), (lti_2d_experiment(10**4), Q_2D)):
        est = []
        for seed in range(100):
            tr = simulate(ex.model, ex.x0, ex.u, ex.w_true, ex.v_density, seed=1000 + seed)
            est.append(estimate_moments(build_residue_set(ex.model, tr.z, tr.u, ex.v_density)).cov)
        est = np.array(est)
        mean = est.mean(axis=0)
        se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
        z = np.abs(mean - Q) / se
        ok &= bool(np.all(z < MDM_SE_BAND))
        details.append(f"{Q.shape[0]}-D max |mean - Q| / se = {z.max():.2f}")
    record(7, ok, ", ".join(details) + f" (< {MDM_SE_BAND:g})")
    assert ok


def random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.1 * np.eye(n)


def test_criterion_08_metric_properties():
    rng = np.random.default_rng(8)
    worst = {"identity": 0.0, "symmetry": 0.0, "congruence": 0.0}
    for i in range(100):
        n = 1 + i % 4
        A, B = random_spd(rng, n), random_spd(rng, n)
        T = rng.normal(size=(n, n)) + 3 * np.eye(n)
        d = covariance_distance(A, B)
        worst["identity"] = max(worst["identity"], covariance_distance(A, A))
        worst["symmetry"] = max(worst["symmetry"], abs(d - covariance_distance(B, A)))
        worst["congruence"] = max(worst["congruence"],
                                  abs(d - covariance_distance(T @ A @ T.T, T @ B @ T.T)))
    ok = max(worst.values()) < METRIC_TOL
    record(8, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (< {METRIC_TOL:g})")
    assert ok


def test_criterion_09_kde_paths():
    rng = np.random.default_rng(9)
    worst = 0.0
    for i in range(10):
        kind = i % 3
        if kind == 0:
            x = rng.normal(rng.uniform(-3, 3), rng.uniform(0.5, 3), 20_000)
        elif kind == 1:
            x = rng.rayleigh(rng.uniform(0.5, 3), 20_000)
        else:
            x = np.concatenate([rng.normal(-2, 0.7, 10_000), rng.normal(2, 1.3, 10_000)])
        B = silverman_bandwidth(x)
        g = default_grid(x, B)
        d = evaluate_kde(x, B, g, method="direct").values
        b = evaluate_kde(x, B, g, method="binned").values
        worst = max(worst, float(np.max(np.abs(d - b))))
    ok = worst < KDE_TOL
    record(9, ok, f"max sup-norm |direct - binned| = {worst:.2e} (< {KDE_TOL:g})")
    assert ok


def cell_gaussian_pmd(mean, sd, lower, upper, n):
    """PMD of an axis-aligned Gaussian: weight = exact probability of each grid cell / cell volume."""
    g = GridSpec(lower, upper, n)
    w = np.ones(g.shape)
    for d, (ax, h) in enumerate(zip(g.axes, g.spacing)):
        p = norm.cdf(ax + h / 2, mean[d], sd[d]) - norm.cdf(ax - h / 2, mean[d], sd[d])
        shape = [1] * g.dim
        shape[d] = -1
        w = w * (p / h).reshape(shape)
    return PointMassDensity(g, w)


def test_criterion_10_pmd_order():
    mean, sd = np.array([0.3, -0.5]), np.array([1.3, 0.8])
    lower, upper = mean - 8 * sd, mean + 8 * sd
    errs, spacings = [], []
    for n in (128, 256, 512):
        p = cell_gaussian_pmd(mean, sd, lower, upper, n)
        m, c = moments(p)
        errs.append(max(np.max(np.abs(m - mean)), np.max(np.abs(c - np.diag(sd ** 2)))))
        spacings.append(p.grid.spacing.max())
    orders = np.diff(np.log(errs)) / np.diff(np.log(spacings))
    ok = bool(np.all(orders >= PMD_MIN_ORDER))
    record(10, ok, f"moment errors {', '.join(f'{e:.2e}' for e in errs)} at N = 128/256/512; "
                   f"observed orders {', '.join(f'{o:.3f}' for o in orders)} (>= {PMD_MIN_ORDER})")
    assert ok
