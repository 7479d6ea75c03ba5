import numpy as np
import pytest

from noisedeconv.config import bundled_config_path, load_config, parse_config, parse_matrices
from noisedeconv.errors import ConfigError
from noisedeconv.model import GaussianSumNoise, RayleighNoise

MINIMAL = """
[experiment]
horizon = 100
[model]
law = constant
F = 0.5
G = 1
H = 1; 2
[control]
law = zeros
[measurement_noise]
mean = 0 0
cov = 1 0; 0 1
[process_noise]
family = gaussian
mean = 1
cov = 2
"""


def test_bundled_configs_are_short_and_parse():
    for name in ("scalar_ltv", "lti_2d"):
        path = bundled_config_path(name)
        body = [l for l in path.read_text().splitlines() if l.strip() and not l.startswith("#")]
        assert len(body) <= 25
        cfg = load_config(path)
        assert cfg.mode == "simulate" and cfg.horizon == 10**6
    s = load_config(bundled_config_path("scalar_ltv"))
    assert isinstance(s.w_true, RayleighNoise) and s.w_true.sigma == 2.0
    assert s.model(10).F_at(5)[0, 0] == pytest.approx(0.9 * np.sin(5e-4))
    t = load_config(bundled_config_path("lti_2d"))
    assert isinstance(t.w_true, GaussianSumNoise)
    np.testing.assert_allclose(t.w_true.cov, [[6.5, -3.0], [-3.0, 6.0]])
    np.testing.assert_allclose(t.v_density.cov, [[2.0, -1.0], [-1.0, 2.0]])


def test_minimal_constant_model():
    cfg = parse_config(MINIMAL)
    m = cfg.model()
    assert (m.nx, m.nu, m.nz) == (1, 1, 2) and m.is_lti
    assert cfg.tuning_grid().epsilons.size == 13


@pytest.mark.parametrize("tau", ["0", "1", "-5"])
def test_horizon_too_small(tau):
    with pytest.raises(ConfigError, match="horizon must be ≥ 2"):
        parse_config(MINIMAL.replace("horizon = 100", f"horizon = {tau}"))
    cfg = parse_config(MINIMAL)
    with pytest.raises(ConfigError, match="horizon must be ≥ 2"):
        cfg.with_overrides(tau=int(tau))


@pytest.mark.parametrize("old,new,msg", [
    ("law = constant", "law = spline", r"\[model\] law"),
    ("cov = 2", "cov = x", r"\[process_noise\] cov"),
    ("mean = 0 0", "mean = 0", r"\[measurement_noise\]"),
    ("law = zeros", "law = chirp", r"\[control\] law"),
    ("family = gaussian", "family = cauchy", r"\[process_noise\] family"),
    ("horizon = 100", "horizon = 100\nmode = batch", r"\[experiment\] mode"),
])
def test_field_level_messages(old, new, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(MINIMAL.replace(old, new, 1))


def test_missing_pieces():
    with pytest.raises(ConfigError, match="process_noise"):
        parse_config(MINIMAL.split("[process_noise]")[0])
    with pytest.raises(ConfigError, match="measurement_noise"):
        parse_config(MINIMAL.replace("[measurement_noise]", "[nm]"))
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/x.cfg")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("no section header")


def test_modes_are_exclusive(tmp_path):
    with pytest.raises(ConfigError, match=r"\[data\]"):
        parse_config(MINIMAL + "[data]\nz = z.csv\n")
    ident = MINIMAL.replace("horizon = 100", "mode = identify").replace("[control]\nlaw = zeros\n", "")
    cfg = parse_config(ident + "[data]\nz = z.csv\n", source=tmp_path / "c.cfg")
    assert cfg.mode == "identify" and cfg.z_path == tmp_path / "z.csv"
    with pytest.raises(ConfigError, match="not allowed in identify"):
        parse_config(ident.replace("mode = identify", "mode = identify\nhorizon = 5"))


def test_fixed_and_overrides():
    cfg = parse_config(MINIMAL + "[tuning]\nfixed_bandwidth = 1.5\nfixed_eps = 1e-3\n")
    tg = cfg.tuning_grid()
    assert tg.bandwidth_scales.tolist() == [1.5] and tg.epsilons.tolist() == [1e-3]
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "[tuning]\nfixed_bandwidth = 1.5\n")
    o = parse_config(MINIMAL).with_overrides(seed=9, tau=50, fixed_bandwidth=2, fixed_eps=0.1)
    assert (o.seed, o.horizon, o.fixed) == (9, 50, (2.0, 0.1))
    with pytest.raises(ConfigError):
        parse_config(MINIMAL).with_overrides(fixed_bandwidth=2)


def test_table_model(tmp_path):
    tau = 30
    ks = np.arange(tau + 1)
    np.savez(tmp_path / "m.npz", F=(0.5 * np.cos(ks))[:, None, None], G=np.ones((tau + 1, 1, 1)),
             H=np.ones((tau + 1, 1, 1)))
    text = MINIMAL.replace("horizon = 100", f"horizon = {tau}").replace(
        "law = constant\nF = 0.5\nG = 1\nH = 1; 2", "law = table\nfile = m.npz").replace(
        "mean = 0 0\ncov = 1 0; 0 1", "mean = 0\ncov = 1")
    cfg = parse_config(text, source=tmp_path / "c.cfg")
    assert cfg.model().F_at(4)[0, 0] == pytest.approx(0.5 * np.cos(4))
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(text.replace("m.npz", "nope.npz"), source=tmp_path / "c.cfg")


def test_parse_matrices():
    m = parse_matrices("4 1.5; 1.5 2 | 1 0.5; 0.5 2")
    assert m.shape == (2, 2, 2) and m[1, 0, 1] == 0.5
