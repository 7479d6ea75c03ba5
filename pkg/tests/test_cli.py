import json

import numpy as np
import pytest

from noisedeconv import io
from noisedeconv.cli import main, run_identify, run_simulate
from noisedeconv.config import bundled_config_path, load_config, parse_config
from noisedeconv.model import GaussianDensity, ModelSequence, simulate
from noisedeconv.pmd import integral_error, moments

FAST = ["--fixed-bandwidth", "1", "--fixed-eps", "1e-3"]


def test_simulate_identify_round_trip(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", "bundled:scalar_ltv", "--tau", "4000", "--out", str(a)]) == 0
    assert "integral error" in capsys.readouterr().out
    assert main(["identify", "--config", "bundled:scalar_ltv", "--z", str(a / "log.csv"),
                 "--out", str(b)]) == 0
    assert (a / "density.csv").read_bytes() == (b / "density.csv").read_bytes()
    assert (a / "tuning_curve.csv").read_bytes() == (b / "tuning_curve.csv").read_bytes()


def test_report_recomputable_from_files(tmp_path):
    cfg = load_config(bundled_config_path("lti_2d")).with_overrides(tau=6000, out=tmp_path, seed=3)
    rep = run_simulate(cfg)
    saved = io.read_report_json(tmp_path / "report.json")
    dens = io.read_density_csv(tmp_path / "density.csv")
    mean, cov = moments(dens)
    np.testing.assert_allclose(saved["mean_pmd"], mean, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(saved["cov_pmd"], cov, rtol=1e-12)
    assert saved["integral_error"] == pytest.approx(integral_error(dens, cfg.w_true), rel=1e-12)
    assert saved["kappa"] == rep.kappa == 3000
    curve = io.read_tuning_csv(tmp_path / "tuning_curve.csv")
    assert len(curve["d"]) == 7 * 13 and saved["d"] == pytest.approx(np.nanmin(curve["d"]))
    np.testing.assert_array_equal(io.read_density_json(tmp_path / "density.json").values, dens.values)
    assert set(saved["artifacts"]) >= {"log", "density_csv", "report", "tuning_curve", "residues"}


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--config", "bundled:scalar_ltv", "--tau", "0"]) == 2
    assert "horizon must be ≥ 2" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "none.cfg")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("k,z_1,u_1\n0,1,1\n1,2,1\n2,3,\n3,4,\n")
    assert main(["identify", "--config", "bundled:scalar_ltv", "--z", str(bad), "--out", str(tmp_path)]) == 3
    assert "row 4" in capsys.readouterr().err
    # a degenerate log: constant residues cannot form a bandwidth
    flat = tmp_path / "flat.csv"
    io.write_log_csv(flat, np.zeros((41, 1)), np.zeros((40, 1)))
    assert main(["identify", "--config", "bundled:scalar_ltv", "--z", str(flat), "--out", str(tmp_path)] + FAST) == 4


def test_validate_model_verb(tmp_path, capsys):
    assert main(["validate-model", "--config", "bundled:lti_2d"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    cfg = tmp_path / "rank.cfg"
    cfg.write_text("[experiment]\nhorizon = 10\n[model]\nlaw = constant\nF = 1 0; 0 1\nG = 1; 1\n"
                   "H = 1 0; 1 0\n[control]\nlaw = zeros\n[measurement_noise]\nmean = 0 0\n"
                   "cov = 1 0; 0 1\n[process_noise]\nmean = 0 0\ncov = 1 0; 0 1\n")
    assert main(["validate-model", "--config", str(cfg)]) == 2
    assert "rank deficient" in capsys.readouterr().err


def test_tune_curve_only(tmp_path):
    out = tmp_path / "t"
    assert main(["tune-curve", "--config", "bundled:scalar_ltv", "--tau", "3000", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["tuning_curve.csv"]


def test_identify_external_gaussian_log(tmp_path):
    """Log produced outside the package for an LTI model with Gaussian process noise."""
    rng = np.random.default_rng(11)
    tau = 200_000
    F = np.array([[0.8, 0.1], [0.0, 0.5]])
    H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    mw, Qw = np.array([0.5, -1.0]), np.array([[1.0, 0.3], [0.3, 0.5]])
    R = 0.2 * np.eye(3)
    u = rng.standard_normal((tau, 1))
    x = np.zeros(2)
    z = np.empty((tau + 1, 3))
    w = rng.multivariate_normal(mw, Qw, tau)
    v = rng.multivariate_normal(np.zeros(3), R, tau + 1)
    for k in range(tau + 1):
        z[k] = H @ x + v[k]
        if k < tau:
            x = F @ x + np.array([1.0, 0.0]) * u[k, 0] + w[k]
    io.write_log_csv(tmp_path / "ext.csv", z, u)
    text = ("[experiment]\nmode = identify\n[model]\nlaw = constant\nF = 0.8 0.1; 0 0.5\nG = 1; 0\n"
            "H = 1 0; 0 1; 1 1\n[measurement_noise]\nmean = 0 0 0\ncov = 0.2 0 0; 0 0.2 0; 0 0 0.2\n"
            "[data]\nz = ext.csv\n")
    cfg = parse_config(text, source=tmp_path / "ext.cfg").with_overrides(out=tmp_path / "o")
    rep = run_identify(cfg)
    assert rep.integral_error is None
    se = np.sqrt(np.diag(Qw) / rep.kappa)
    assert np.all(np.abs(rep.mean_pmd - mw) < 5 * se + 0.02)
    np.testing.assert_allclose(rep.cov_pmd, Qw, atol=0.1)
    np.testing.assert_allclose(rep.cov_mdm, Qw, atol=0.03)
