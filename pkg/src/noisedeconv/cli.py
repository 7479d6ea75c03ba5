"""Command-line front end: simulate, identify, tune-curve and validate-model.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, bundled_config_path, load_config
from .errors import ConfigError, DataError, NoiseDeconvError, RankDeficiencyError
from .kde import GriddedDensity
from .model import validate, simulate
from .moments import estimate_moments, rayleigh_mom
from .pmd import integral_error, moments
from .residue import build_residue_set
from .tuning import tune

log = logging.getLogger("noisedeconv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class RunReport:
    kappa: int
    bandwidth_scale: float
    bandwidth: np.ndarray
    epsilon: float
    d: float
    mean_pmd: np.ndarray
    cov_pmd: np.ndarray
    mean_mdm: np.ndarray
    cov_mdm: np.ndarray
    clipped_mass: float
    integral_error: float | None
    baseline: dict | None
    timings: dict
    config: dict
    artifacts: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class _Clock:
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.timings = {}

    @contextlib.contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def _rayleigh_baseline(est, w_true, grid):
    """Moment-matched Rayleigh fit of a scalar noise, scored on the KDD grid."""
    if est.mean.size != 1 or not est.second_moment.item() > 0:
        return None
    sigma2, fit = rayleigh_mom(est.mean, est.second_moment)
    out = {"family": "rayleigh", "sigma2": sigma2}
    if w_true is not None:
        vals = fit.pdf(grid.mesh()).reshape(grid.shape)
        out["integral_error"] = integral_error(GriddedDensity(grid, vals), w_true)
    return out


def _identify(cfg: ExperimentConfig, model, z, u, clock) -> tuple[RunReport, dict]:
    with clock("residues"):
        residues = build_residue_set(model, z, u, cfg.v_density, cfg.stride, cfg.offset)
        est = estimate_moments(residues)
    with clock("tuning"):
        result = tune(residues, cfg.tuning_grid(), grid=cfg.grid(model.nx),
                      with_nu=cfg.v_density is not None, points=cfg.grid_points)
    dens = result.best.density
    mean, cov = moments(dens)
    err = integral_error(dens, cfg.w_true) if cfg.w_true is not None else None
    baseline = None
    if cfg.w_true is None or getattr(cfg.w_true, "dim", 0) == 1:
        try:
            baseline = _rayleigh_baseline(est, cfg.w_true, dens.grid)
        except ValueError:
            baseline = None
    timings = dict(clock.timings)
    timings.update({f"kdd_{k}": v for k, v in result.best.timings.items()})
    report = RunReport(
        kappa=residues.kappa, bandwidth_scale=result.bandwidth_scale,
        bandwidth=result.bandwidth.matrix, epsilon=result.epsilon, d=result.d,
        mean_pmd=mean, cov_pmd=cov, mean_mdm=est.mean, cov_mdm=est.cov,
        clipped_mass=result.best.clipped_mass, integral_error=err, baseline=baseline,
        timings=timings, config=cfg.echo())
    return report, {"residues": residues, "tuning": result, "density": dens}


def _write_outputs(cfg, report, parts, clock, curve_only=False):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with clock("write"):
        arts = {"tuning_curve": io.write_tuning_csv(out / "tuning_curve.csv", parts["tuning"].records)}
        if not curve_only:
            res = parts["residues"]
            arts["residues"] = io.write_residues_csv(out / "residues.csv", res.indices, res.samples)
            arts["density_csv"] = io.write_density_csv(out / "density.csv", parts["density"])
            arts["density_json"] = io.write_density_json(out / "density.json", parts["density"])
    report.artifacts.update({k: str(v) for k, v in arts.items()})
    report.timings.update(clock.timings)
    if not curve_only:
        report.artifacts["report"] = str(out / "report.json")
        io.write_report_json(out / "report.json", report.to_dict())
    return report


def _simulated_logs(cfg, clock):
    model = cfg.model()
    u = cfg.controls(cfg.horizon, model.nu)
    x0 = cfg.x0 if cfg.x0 is not None else np.zeros(model.nx)
    with clock("simulate"):
        traj = simulate(model, x0, u, cfg.w_true, cfg.v_density, seed=cfg.seed)
    return model, traj.z, u


def _data_logs(cfg, z_csv, u_csv, clock):
    z_csv = z_csv or cfg.z_path
    u_csv = u_csv or cfg.u_path or z_csv
    if z_csv is None:
        raise ConfigError("[data] z: no measurement CSV given")
    probe = cfg.model(2)
    with clock("read"):
        z, u = io.read_log_csv(z_csv, u_csv, nz=probe.nz, nu=probe.nu)
    tau = len(z) - 1
    if tau < 2:
        raise DataError(f"{z_csv}: horizon must be ≥ 2 (found {tau})")
    return cfg.model(tau), z, u


def run_simulate(cfg: ExperimentConfig) -> RunReport:
    """Simulate, identify, and write log, residue, density, tuning-curve and report files."""
    if cfg.mode != "simulate":
        raise ConfigError("[experiment] mode: run_simulate needs a simulation-mode configuration")
    clock = _Clock()
    model, z, u = _simulated_logs(cfg, clock)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with clock("write"):
        log_path = io.write_log_csv(out / "log.csv", z, u)
    report, parts = _identify(cfg, model, z, u, clock)
    report.artifacts["log"] = str(log_path)
    return _write_outputs(cfg, report, parts, clock)


def run_identify(cfg: ExperimentConfig, z_csv=None, u_csv=None) -> RunReport:
    """Identify from logged data; ``u_csv`` defaults to the measurement file."""
    clock = _Clock()
    model, z, u = _data_logs(cfg, z_csv, u_csv, clock)
    report, parts = _identify(cfg, model, z, u, clock)
    return _write_outputs(cfg, report, parts, clock)


def run_tune_curve(cfg: ExperimentConfig, z_csv=None, u_csv=None) -> RunReport:
    """Only the tuning sweep; writes ``tuning_curve.csv``."""
    clock = _Clock()
    if z_csv is not None or cfg.mode == "identify":
        model, z, u = _data_logs(cfg, z_csv, u_csv, clock)
    else:
        model, z, u = _simulated_logs(cfg, clock)
    report, parts = _identify(cfg, model, z, u, clock)
    return _write_outputs(cfg, report, parts, clock, curve_only=True)


def run_validate_model(cfg: ExperimentConfig) -> dict:
    horizon = cfg.horizon if cfg.horizon is not None else 2
    rep = validate(cfg.model(horizon))
    return {"ok": rep.ok, "nx": cfg.model(horizon).nx, "min_singular_value": rep.min_singular_value,
            "min_singular_step": rep.min_singular_step}


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="noisedeconv",
                                description="Process-noise density identification by kernel density deconvolution.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", required=True,
                        help="configuration file, or bundled:scalar_ltv / bundled:lti_2d")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--tau", type=int, help="override the horizon")
        sp.add_argument("--fixed-bandwidth", type=float, metavar="S",
                        help="fixed Silverman bandwidth multiplier (with --fixed-eps)")
        sp.add_argument("--fixed-eps", type=float, metavar="E")
        sp.add_argument("-v", "--verbose", action="store_true")

    for verb, text in (("simulate", "simulate a configured experiment and identify its noise"),
                       ("identify", "identify from measurement/control CSV logs"),
                       ("tune-curve", "emit only the d(bandwidth, epsilon) table"),
                       ("validate-model", "check model dimensions and rank")):
        sp = sub.add_parser(verb, help=text)
        common(sp)
        if verb in ("identify", "tune-curve"):
            sp.add_argument("--z", help="CSV with columns k, z_1..")
            sp.add_argument("--u", help="CSV with columns k, u_1.. (default: the --z file)")
    return p


def _load(args):
    name = args.config
    path = bundled_config_path(name.split(":", 1)[1]) if name.startswith("bundled:") else name
    cfg = load_config(path)
    tau = args.tau
    if args.verb == "identify" or getattr(args, "z", None):
        tau = None
    return cfg.with_overrides(seed=args.seed, tau=tau, out=args.out,
                              fixed_bandwidth=args.fixed_bandwidth, fixed_eps=args.fixed_eps)


def _summary(report: RunReport):
    lines = [f"kappa          {report.kappa}",
             f"bandwidth x    {report.bandwidth_scale:.4g}",
             f"epsilon        {report.epsilon:.4g}",
             f"d              {report.d:.4g}",
             f"mean (PMD)     {np.array2string(np.asarray(report.mean_pmd), precision=4)}",
             f"cov (PMD)      {np.array2string(np.asarray(report.cov_pmd), precision=4)}",
             f"cov (moments)  {np.array2string(np.asarray(report.cov_mdm), precision=4)}",
             f"clipped mass   {report.clipped_mass:.3g}"]
    if report.integral_error is not None:
        lines.append(f"integral error {report.integral_error:.4g}")
    if report.baseline and "integral_error" in report.baseline:
        lines.append(f"Rayleigh MoM   {report.baseline['integral_error']:.4g}")
    for k, v in report.artifacts.items():
        lines.append(f"{k:<14} {v}")
    return "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        if args.verb == "validate-model":
            print(json.dumps(run_validate_model(cfg), indent=2))
            return EXIT_OK
        if args.verb == "simulate":
            report = run_simulate(cfg)
        elif args.verb == "identify":
            report = run_identify(cfg, args.z, args.u)
        else:
            report = run_tune_curve(cfg, args.z, args.u)
        print(_summary(report))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RankDeficiencyError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NoiseDeconvError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
