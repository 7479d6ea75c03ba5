"""Experiment configuration files (INI syntax, read with configparser).

A configuration has the sections

``[experiment]``
    ``mode`` (simulate | identify), ``horizon``, ``seed``, ``output``.  The
    output directory is relative to the working directory; data and table
    paths are relative to the configuration file.
``[model]``
    ``law`` = paper_scalar_ltv | paper_lti_2d | constant | table, plus law
    parameters (``amplitude``, ``rate`` for the scalar law, ``F``, ``G``, ``H``
    for ``constant``, ``file`` for an ``.npz`` of per-step tables).
``[control]``
    ``law`` = ones | zeros | sincos (simulation mode only).
``[initial_state]``
    ``x0`` (simulation mode only, default zero).
``[measurement_noise]``
    Gaussian ``mean`` and ``cov``, or ``family = none``.
``[process_noise]``
    True noise, ``family`` = rayleigh (``sigma``), gaussian (``mean``, ``cov``)
    or gaussian_sum (``weights``, ``means``, ``covs``).  Required to simulate;
    optional in data mode, where it is only used to score the estimate.
``[data]``
    ``z`` and ``u`` CSV paths (identify mode).
``[grid]``
    ``points`` and optionally ``lower`` / ``upper``.
``[tuning]``
    ``bandwidth_scales``, ``epsilons`` or ``fixed_bandwidth`` + ``fixed_eps``;
    ``stride``, ``offset``.

Vectors are whitespace or comma separated; matrix rows are separated by ``;``
and lists of matrices by ``|``.
"""

from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .experiments import CONTROL_LAWS, MODEL_LAWS
from .kde import DEFAULT_POINTS, GridSpec
from .model import GaussianDensity, GaussianSumNoise, ModelSequence, RayleighNoise
from .tuning import TuningGrid

MODES = ("simulate", "identify")


def parse_vector(text):
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValueError("empty value")
    return np.array([float(p) for p in parts])


def parse_matrix(text):
    rows = [parse_vector(r) for r in text.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows must be nonempty and of equal length")
    return np.array(rows)


def parse_matrices(text):
    return np.array([parse_matrix(m) for m in text.split("|")])


def _field(section, key):
    return f"[{section}] {key}"


class _Reader:
    """configparser wrapper turning parse failures into field-level ConfigErrors."""

    def __init__(self, parser, base):
        self.parser = parser
        self.base = base

    def has(self, section, key=None):
        if key is None:
            return self.parser.has_section(section)
        return self.parser.has_option(section, key)

    def get(self, section, key, conv=str, default=...):
        if not self.has(section, key):
            if default is ...:
                raise ConfigError(f"{_field(section, key)}: missing")
            return default
        raw = self.parser.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{_field(section, key)}: {exc}") from None

    def path(self, section, key, default=...):
        p = self.get(section, key, str, default)
        if p is None or p is default:
            return p
        p = Path(p).expanduser()
        return p if p.is_absolute() else self.base / p


def _noise_from(reader, section, dim=None):
    family = reader.get(section, "family", str.lower, "gaussian")
    try:
        if family == "none":
            return None
        if family == "gaussian":
            mean = reader.get(section, "mean", parse_vector)
            cov = reader.get(section, "cov", parse_matrix)
            noise = GaussianDensity(mean, cov)
        elif family == "rayleigh":
            noise = RayleighNoise(reader.get(section, "sigma", float))
        elif family == "gaussian_sum":
            noise = GaussianSumNoise(reader.get(section, "weights", parse_vector),
                                     reader.get(section, "means", parse_matrix),
                                     reader.get(section, "covs", parse_matrices))
        else:
            raise ConfigError(f"{_field(section, 'family')}: unknown family {family!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None
    if dim is not None and noise.dim != dim:
        raise ConfigError(f"[{section}]: dimension {noise.dim} does not match the model ({dim})")
    return noise


@dataclass
class ExperimentConfig:
    """Validated experiment description; see the module docstring for the file format."""

    mode: str
    model_law: str
    model_params: dict
    horizon: int | None
    v_density: GaussianDensity | None
    w_true: object = None
    control_law: str | None = None
    x0: np.ndarray | None = None
    z_path: Path | None = None
    u_path: Path | None = None
    grid_points: int | None = None
    grid_lower: np.ndarray | None = None
    grid_upper: np.ndarray | None = None
    tuning: TuningGrid = field(default_factory=TuningGrid)
    fixed: tuple | None = None
    stride: int = 2
    offset: int = 1
    seed: int = 0
    output: Path = Path("out")
    source: Path | None = None
    text: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"[experiment] mode: must be one of {MODES}, got {self.mode!r}")
        if self.mode == "simulate":
            if self.horizon is None:
                raise ConfigError("[experiment] horizon: missing")
            if self.w_true is None:
                raise ConfigError("[process_noise]: required in simulation mode")
        if self.horizon is not None and self.horizon < 2:
            raise ConfigError("[experiment] horizon: horizon must be ≥ 2")
        if self.stride < 2:
            raise ConfigError("[tuning] stride: must be at least 2")
        if self.offset < 0:
            raise ConfigError("[tuning] offset: must be nonnegative")

    # ------------------------------------------------------------------
    def with_overrides(self, seed=None, tau=None, out=None, fixed_bandwidth=None, fixed_eps=None):
        cfg = copy.copy(self)
        if seed is not None:
            cfg.seed = int(seed)
        if tau is not None:
            cfg.horizon = int(tau)
        if out is not None:
            cfg.output = Path(out)
        if (fixed_bandwidth is None) != (fixed_eps is None):
            raise ConfigError("--fixed-bandwidth and --fixed-eps must be given together")
        if fixed_bandwidth is not None:
            cfg.fixed = (float(fixed_bandwidth), float(fixed_eps))
        cfg.__post_init__()
        return cfg

    def model(self, horizon=None) -> ModelSequence:
        """Model sequence for ``horizon`` steps (default: the configured horizon)."""
        tau = self.horizon if horizon is None else horizon
        if tau is None or tau < 2:
            raise ConfigError("[experiment] horizon: horizon must be ≥ 2")
        p = dict(self.model_params)
        try:
            if self.model_law == "paper_scalar_ltv":
                return MODEL_LAWS[self.model_law](tau, **p)
            if self.model_law == "paper_lti_2d":
                return MODEL_LAWS[self.model_law](tau)
            if self.model_law == "constant":
                return MODEL_LAWS[self.model_law](tau, p["F"], p["G"], p["H"])
            if self.model_law == "table":
                tables = np.load(p["file"])
                return ModelSequence(tau, tables["F"], tables["G"], tables["H"])
        except KeyError as exc:
            raise ConfigError(f"[model] {exc.args[0]}: missing") from None
        except ValueError as exc:
            raise ConfigError(f"[model]: {exc}") from None
        raise ConfigError(f"[model] law: unknown law {self.model_law!r}")

    def controls(self, horizon, nu):
        return CONTROL_LAWS[self.control_law](horizon, nu)

    def tuning_grid(self) -> TuningGrid:
        if self.fixed is not None:
            return TuningGrid.fixed(*self.fixed)
        return self.tuning

    def grid(self, dim) -> GridSpec | None:
        """Explicit grid when both bounds are configured, else None."""
        if self.grid_lower is None:
            return None
        points = self.grid_points or DEFAULT_POINTS.get(dim, 32)
        try:
            return GridSpec(self.grid_lower, self.grid_upper, points)
        except ValueError as exc:
            raise ConfigError(f"[grid]: {exc}") from None

    def echo(self):
        return {"source": str(self.source) if self.source else None, "text": self.text,
                "mode": self.mode, "seed": self.seed, "horizon": self.horizon,
                "fixed": list(self.fixed) if self.fixed else None}


def _model_params(reader, law):
    if law == "paper_scalar_ltv":
        return {k: reader.get("model", k, float) for k in ("amplitude", "rate") if reader.has("model", k)}
    if law == "constant":
        return {k: reader.get("model", k, parse_matrix) for k in ("F", "G", "H")}
    if law == "table":
        path = reader.path("model", "file")
        if not path.exists():
            raise ConfigError(f"[model] file: {path} does not exist")
        return {"file": path}
    if law == "paper_lti_2d":
        return {}
    raise ConfigError(f"[model] law: unknown law {law!r}; known: {sorted(MODEL_LAWS) + ['table']}")


def parse_config(text, source=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep F/G/H case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    base = Path(source).resolve().parent if source else Path.cwd()
    r = _Reader(parser, base)

    mode = r.get("experiment", "mode", str.lower, "simulate")
    if mode not in MODES:
        raise ConfigError(f"[experiment] mode: must be one of {MODES}, got {mode!r}")
    law = r.get("model", "law", str.lower)
    params = _model_params(r, law)
    horizon = r.get("experiment", "horizon", lambda s: int(float(s)), None)
    if mode == "identify" and r.has("experiment", "horizon"):
        raise ConfigError("[experiment] horizon: not allowed in identify mode (taken from the data)")

    v_density = None
    if r.has("measurement_noise"):
        v_density = _noise_from(r, "measurement_noise")
        if v_density is not None and not isinstance(v_density, GaussianDensity):
            raise ConfigError("[measurement_noise] family: must be gaussian or none")
    else:
        raise ConfigError("[measurement_noise]: missing section")
    w_true = _noise_from(r, "process_noise") if r.has("process_noise") else None

    control_law, x0, z_path, u_path = None, None, None, None
    if mode == "simulate":
        if r.has("data"):
            raise ConfigError("[data]: not allowed in simulation mode")
        control_law = r.get("control", "law", str.lower)
        if control_law not in CONTROL_LAWS:
            raise ConfigError(f"[control] law: unknown law {control_law!r}; known: {sorted(CONTROL_LAWS)}")
        x0 = r.get("initial_state", "x0", parse_vector, None)
    else:
        if r.has("control") or r.has("initial_state"):
            raise ConfigError("[control]/[initial_state]: not allowed in identify mode")
        z_path = r.path("data", "z", None)
        u_path = r.path("data", "u", None)

    scales = r.get("tuning", "bandwidth_scales", parse_vector, None)
    eps = r.get("tuning", "epsilons", parse_vector, None)
    given = {k: v for k, v in (("bandwidth_scales", scales), ("epsilons", eps)) if v is not None}
    try:
        tuning = TuningGrid(**given)
    except ValueError as exc:
        raise ConfigError(f"[tuning]: {exc}") from None
    fb = r.get("tuning", "fixed_bandwidth", float, None)
    fe = r.get("tuning", "fixed_eps", float, None)
    if (fb is None) != (fe is None):
        raise ConfigError("[tuning] fixed_bandwidth/fixed_eps: give both or neither")
    lower = r.get("grid", "lower", parse_vector, None)
    upper = r.get("grid", "upper", parse_vector, None)
    if (lower is None) != (upper is None):
        raise ConfigError("[grid] lower/upper: give both or neither")

    cfg = ExperimentConfig(
        mode=mode, model_law=law, model_params=params, horizon=horizon, v_density=v_density,
        w_true=w_true, control_law=control_law, x0=x0, z_path=z_path, u_path=u_path,
        grid_points=r.get("grid", "points", int, None), grid_lower=lower, grid_upper=upper,
        tuning=tuning, fixed=(fb, fe) if fb is not None else None,
        stride=r.get("tuning", "stride", int, 2), offset=r.get("tuning", "offset", int, 1),
        seed=r.get("experiment", "seed", int, 0),
        output=Path(r.get("experiment", "output", str, "out")),
        source=Path(source) if source else None, text=text)
    _check_dims(cfg)
    return cfg


def _check_dims(cfg):
    model = cfg.model(max(cfg.horizon or 2, 2))
    if cfg.v_density is not None and cfg.v_density.dim != model.nz:
        raise ConfigError(f"[measurement_noise]: dimension {cfg.v_density.dim} does not match nz = {model.nz}")
    if cfg.w_true is not None and cfg.w_true.dim != model.nx:
        raise ConfigError(f"[process_noise]: dimension {cfg.w_true.dim} does not match nx = {model.nx}")
    if cfg.x0 is not None and cfg.x0.shape != (model.nx,):
        raise ConfigError(f"[initial_state] x0: expected {model.nx} entries")
    for name, arr in (("lower", cfg.grid_lower), ("upper", cfg.grid_upper)):
        if arr is not None and arr.shape != (model.nx,):
            raise ConfigError(f"[grid] {name}: expected {model.nx} entries")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    return parse_config(path.read_text(), source=path)


def bundled_config_path(name):
    """Path of a configuration shipped with the package (``scalar_ltv`` or ``lti_2d``)."""
    here = Path(__file__).resolve().parent / "configs"
    p = here / (name if name.endswith(".cfg") else name + ".cfg")
    if not p.exists():
        raise ConfigError(f"no bundled configuration {name!r}")
    return p
