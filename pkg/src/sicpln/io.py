"""CSV ingestion and result serialization.

Files are comma-separated, UTF-8, with '.' as decimal mark and an optional
header row. Floats are written with ``repr`` so a save/load round trip is
exact.
"""
from __future__ import annotations

import csv
import json
import os
import platform
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .exceptions import DataError
from .model import CountDataset, ModelParams, VariationalParams

__all__ = [
    "read_matrix",
    "write_matrix",
    "load_dataset",
    "save_dataset",
    "split_offset",
    "add_intercept",
    "save_fit",
    "load_fit",
    "read_path",
    "read_config",
    "write_manifest",
    "versions",
]


def _fmt(v: float) -> str:
    return repr(float(v))


def read_matrix(path, header: bool = False, integral: bool = False):
    """Parse a rectangular numeric CSV.

    Returns ``(matrix, column_names)``; names are ``None`` without a header.
    Errors carry 1-based line and column numbers of the offending cell.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    names = None
    first_line = 1
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(names) if names is not None else len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_line
        if len(row) != width:
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at line {line}, column {j + 1}") from None
            if integral and (not np.isfinite(v) or v < 0 or v != round(v)):
                raise DataError(
                    f"{path}: count {cell!r} at line {line}, column {j + 1} is not a nonnegative integer")
            out[i, j] = v
    return out, names


def write_matrix(path, A, names: Optional[Sequence[str]] = None, integral: bool = False) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if names is not None:
            w.writerow(list(names))
        for row in A:
            w.writerow([str(int(v)) if integral else _fmt(v) for v in row])


def load_dataset(y_path, x_path, o_path=None, header: bool = False,
                 offset_log_col: Optional[str] = None) -> CountDataset:
    """Read counts, covariates and optional offsets into a :class:`CountDataset`.

    An intercept column is prepended to X unless its first column is
    already constant 1. ``offset_log_col`` names (with a header) or
    indexes (0-based, without one) a column of the covariate file holding
    a natural-scale sampling effort; it is removed from X and its log is
    used as the offset of every species.
    """
    Y, _ = read_matrix(y_path, header=header, integral=True)
    X, xnames = read_matrix(x_path, header=header)
    O = None
    if offset_log_col is not None:
        X, O = split_offset(X, xnames, offset_log_col, Y.shape[1], x_path, header)
    if o_path is not None:
        if O is not None:
            raise DataError("give either an offset file or an offset column, not both")
        O, _ = read_matrix(o_path, header=header)
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
    return CountDataset(Y=Y, X=add_intercept(X), O=O)


def split_offset(X, names, spec, p: int, path="X", header: bool = False):
    """Remove the natural-scale effort column ``spec`` from ``X``.

    Returns ``(X_without_column, O)`` where ``O`` repeats ``log(effort)``
    across ``p`` species.
    """
    col = _resolve_column(spec, names, X.shape[1], path)
    effort = X[:, col]
    if np.any(effort <= 0):
        i = int(np.argmax(effort <= 0))
        raise DataError(f"{path}: offset column must be > 0; line {i + 1 + int(header)} has {effort[i]!r}")
    O = np.repeat(np.log(effort)[:, None], p, axis=1)
    return np.delete(X, col, axis=1), O


def add_intercept(X):
    """Prepend a ones column unless the first column already is constant 1."""
    if X.shape[1] == 0 or not np.all(X[:, 0] == 1.0):
        X = np.hstack([np.ones((X.shape[0], 1)), X])
    return X


def _resolve_column(spec, names, width, path):
    if names is not None and spec in names:
        return names.index(spec)
    try:
        col = int(spec)
    except ValueError:
        raise DataError(f"{path}: no column named {spec!r}") from None
    if not 0 <= col < width:
        raise DataError(f"{path}: column index {col} out of range (0..{width - 1})")
    return col


def save_dataset(outdir, data: CountDataset) -> Dict[str, str]:
    """Write Y.csv, X.csv (intercept included) and O.csv without headers."""
    os.makedirs(outdir, exist_ok=True)
    paths = {k: os.path.join(outdir, f"{k}.csv") for k in ("Y", "X", "O")}
    write_matrix(paths["Y"], data.Y, integral=True)
    write_matrix(paths["X"], data.X)
    write_matrix(paths["O"], data.O)
    return paths


PATH_COLUMNS = ("step", "eps", "coef_row", "coef_col", "value")


def save_fit(outdir, result, diagnostics: Optional[dict] = None) -> None:
    """Serialize a fit as B/Sigma/M/S CSVs, ``path.csv`` and ``diagnostics.json``."""
    os.makedirs(outdir, exist_ok=True)
    write_matrix(os.path.join(outdir, "B.csv"), result.params.B)
    write_matrix(os.path.join(outdir, "Sigma.csv"), result.params.Sigma)
    write_matrix(os.path.join(outdir, "M.csv"), result.vp.M)
    write_matrix(os.path.join(outdir, "S.csv"), result.vp.S)
    with open(os.path.join(outdir, "path.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for step, (eps, B) in enumerate(result.path, start=1):
            for k in range(B.shape[0]):
                for j in range(B.shape[1]):
                    w.writerow([step, _fmt(eps), k, j, _fmt(B[k, j])])
    diag = {
        "lambda": result.lam,
        "eps_schedule": [float(e) for e in result.eps_schedule],
        "converged": [bool(c) for c in result.converged],
        "vem_iterations": [len(t) - 1 for t in result.elbo_trace],
        "objective_init": result.objective_init,
        "objective_final": result.objective_final,
        "n_active": int(np.sum(result.active_set[1:])),
    }
    if diagnostics:
        diag.update(diagnostics)
    with open(os.path.join(outdir, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fit(fitdir):
    """Read back ``(ModelParams, VariationalParams)`` from :func:`save_fit` output."""
    def rd(name):
        return read_matrix(os.path.join(fitdir, name))[0]

    params = ModelParams(B=rd("B.csv"), Sigma=rd("Sigma.csv"))
    vp = VariationalParams(M=rd("M.csv"), S=rd("S.csv"))
    return params, vp


def read_path(path) -> List[dict]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != PATH_COLUMNS:
        raise DataError(f"{path}: expected columns {','.join(PATH_COLUMNS)}")
    return rows


def read_config(path) -> Dict[str, str]:
    """Flat ``key = value`` text. Blank lines and ``#`` comments are skipped;
    dashes in keys are read as underscores."""
    out: Dict[str, str] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open config {path}: {exc.strerror}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno} is not key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def versions() -> Dict[str, str]:
    import scipy

    from . import __version__, _kernels

    v = {
        "sicpln": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "backend": _kernels.backend.name,
    }
    if _kernels.HAVE_NUMBA:
        import numba

        v["numba"] = numba.__version__
    return v


def write_manifest(path, command: str, options: Dict[str, object],
                   skip: Iterable[str] = ()) -> None:
    """Record a run so that ``sicpln <command> --config <path>`` repeats it.

    Versions go in comments, so they document the run without being read
    back as options.
    """
    skip = set(skip)
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in sorted(versions().items()):
            fh.write(f"# {k} {v}\n")
        fh.write(f"command = {command}\n")
        for key in sorted(options):
            if key in skip or options[key] is None:
                continue
            fh.write(f"{key} = {_config_value(options[key])}\n")


def _config_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_config_value(x) for x in v)
    return str(v)
