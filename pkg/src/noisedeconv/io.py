"""CSV and JSON readers/writers for logs, residues, densities, tuning curves and reports.

Floats are written with 17 significant digits so that every file parses back to
the exact binary value.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .kde import GridSpec, GriddedDensity

FLOAT_FMT = "%.17g"


def _fmt(x):
    return FLOAT_FMT % x


def _header(prefix, n):
    return [f"{prefix}_{i + 1}" for i in range(n)]


# --------------------------------------------------------------------------
# measurement / control logs


def write_log_csv(path, z, u):
    """Write ``k, z_1..z_nz, u_1..u_nu`` rows for k = 0..tau; u is blank at k = tau."""
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    if z.shape[0] != u.shape[0] + 1:
        raise ValueError("need one more measurement than control")
    tau = u.shape[0]
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write(",".join(["k"] + _header("z", z.shape[1]) + _header("u", u.shape[1])) + "\n")
        body = np.column_stack([np.arange(tau), z[:-1], u])
        fmt = ["%d"] + [FLOAT_FMT] * (z.shape[1] + u.shape[1])
        np.savetxt(f, body, fmt=fmt, delimiter=",")
        f.write(",".join([str(tau)] + [_fmt(x) for x in z[-1]] + [""] * u.shape[1]) + "\n")
    return path


def _columns(header, prefix):
    idx = [i for i, name in enumerate(header) if name.strip().startswith(prefix + "_")]
    expected = _header(prefix, len(idx))
    if [header[i].strip() for i in idx] != expected:
        raise DataError(f"columns {prefix}_1..{prefix}_{len(idx)} are not in order")
    return idx


def _read_block(path, prefix, width=None):
    """Rows of the ``prefix_*`` columns as strings, with 1-based file line numbers."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0].strip() != "k":
            raise DataError(f"{path}: first column must be 'k'")
        cols = _columns(header, prefix)
        if not cols:
            raise DataError(f"{path}: no {prefix}_ columns")
        if width is not None and len(cols) != width:
            raise DataError(f"{path}: expected {width} {prefix}_ columns, found {len(cols)}")
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {line}: expected {len(header)} fields, got {len(row)}")
            rows.append((line, row[0], [row[i] for i in cols]))
    return rows, [header[i].strip() for i in cols]


def _parse(path, line, col, text):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}: row {line}, column {col}: cannot parse {text!r}") from None


def _check_k(path, rows):
    for expect, (line, k, _) in enumerate(rows):
        try:
            ok = int(k) == expect
        except ValueError:
            ok = False
        if not ok:
            raise DataError(f"{path}: row {line}, column k: expected {expect}, got {k!r}")


def read_log_csv(z_path, u_path=None, nz=None, nu=None):
    """Read measurements and controls.

    ``z_path`` must hold ``k, z_1..`` rows for k = 0..tau.  Controls come from
    the ``u_`` columns of ``u_path`` (default: the same file) for k = 0..tau-1;
    a control row at k = tau is optional and must be blank if present.

    Returns
    -------
    z : ndarray (tau+1, nz)
    u : ndarray (tau, nu)
    """
    u_path = z_path if u_path is None else u_path
    zrows, zcols = _read_block(z_path, "z", nz)
    urows, ucols = _read_block(u_path, "u", nu)
    _check_k(z_path, zrows)
    _check_k(u_path, urows)
    tau = len(zrows) - 1
    if tau < 1:
        raise DataError(f"{z_path}: need measurements for at least k = 0 and 1")
    z = np.empty((tau + 1, len(zcols)))
    for i, (line, _, vals) in enumerate(zrows):
        for j, text in enumerate(vals):
            if text.strip() == "":
                raise DataError(f"{z_path}: row {line}, column {zcols[j]}: missing value")
            z[i, j] = _parse(z_path, line, zcols[j], text)
    if len(urows) > tau + 1:
        raise DataError(f"{u_path}: row {urows[tau + 1][0]}: control log longer than measurement log")
    u = np.empty((tau, len(ucols)))
    for i in range(tau):
        if i >= len(urows):
            line = urows[-1][0] + 1 if urows else 2
            raise DataError(f"{u_path}: row {line}: missing control row for k = {i}")
        line, _, vals = urows[i]
        for j, text in enumerate(vals):
            if text.strip() == "":
                raise DataError(f"{u_path}: row {line}, column {ucols[j]}: missing value")
            u[i, j] = _parse(u_path, line, ucols[j], text)
    if len(urows) == tau + 1:
        line, _, vals = urows[tau]
        if any(v.strip() for v in vals):
            raise DataError(f"{u_path}: row {line}: control at k = {tau} is never used and must be blank")
    return z, u


# --------------------------------------------------------------------------
# residues, densities, tuning curves, reports


def write_residues_csv(path, indices, samples):
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(len(samples), -1)
    path = Path(path)
    fmt = ["%d"] + [FLOAT_FMT] * samples.shape[1]
    header = ",".join(["k"] + _header("r", samples.shape[1]))
    np.savetxt(path, np.column_stack([indices, samples]), fmt=fmt, delimiter=",",
               header=header, comments="")
    return path


def read_residues_csv(path):
    rows, cols = _read_block(path, "r")
    k = np.array([int(r[1]) for r in rows])
    x = np.array([[_parse(path, line, c, t) for c, t in zip(cols, vals)] for line, _, vals in rows])
    return k, x


def write_density_csv(path, density: GriddedDensity):
    """Columns ``x_1..x_d, value``, one row per grid point in row-major order."""
    grid = density.grid
    path = Path(path)
    body = np.column_stack([grid.coordinates(), density.values.reshape(-1)])
    header = ",".join(_header("x", grid.dim) + ["value"])
    np.savetxt(path, body, fmt=FLOAT_FMT, delimiter=",", header=header, comments="")
    return path


def read_density_csv(path) -> GriddedDensity:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path) as f:
        header = f.readline().strip().split(",")
    if not header or header[-1] != "value" or header[:-1] != _header("x", len(header) - 1):
        raise DataError(f"{path}: expected header x_1..x_d,value")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    dim = len(header) - 1
    axes = [np.unique(data[:, i]) for i in range(dim)]
    grid = GridSpec([a[0] for a in axes], [a[-1] for a in axes], [len(a) for a in axes])
    if grid.size != len(data) or not np.array_equal(grid.coordinates(), data[:, :dim]):
        raise DataError(f"{path}: coordinates do not form a complete equidistant grid")
    return GriddedDensity(grid, data[:, dim])


def density_to_dict(density: GriddedDensity):
    g = density.grid
    return {"grid": {"lower": g.lower.tolist(), "upper": g.upper.tolist(), "points": list(g.points)},
            "values": density.values.reshape(-1).tolist()}


def density_from_dict(d) -> GriddedDensity:
    try:
        g = d["grid"]
        return GriddedDensity(GridSpec(g["lower"], g["upper"], g["points"]), d["values"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed density record: {exc}") from None


def write_density_json(path, density):
    path = Path(path)
    path.write_text(json.dumps(density_to_dict(density)))
    return path


def read_density_json(path):
    return density_from_dict(json.loads(Path(path).read_text()))


def write_tuning_csv(path, records):
    """Columns ``bandwidth_scale, epsilon, d, clipped_mass`` (failed candidates give inf/nan)."""
    path = Path(path)
    with open(path, "w") as f:
        f.write("bandwidth_scale,epsilon,d,clipped_mass\n")
        for r in records:
            f.write(",".join(_fmt(x) for x in (r.bandwidth_scale, r.epsilon, r.d, r.clipped_mass)) + "\n")
    return path


def read_tuning_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {"bandwidth_scale": data[:, 0], "epsilon": data[:, 1], "d": data[:, 2],
            "clipped_mass": data[:, 3]}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_report_json(path, report: dict):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(report), indent=2) + "\n")
    return path


def read_report_json(path):
    return json.loads(Path(path).read_text())
