"""CSV ingestion and JSON (de)serialisation of fits and reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .estimation import FitResult
from .regression import Dataset, DWRegressionFit, NBFit, PoissonFit

SCHEMA_VERSION = "1.0"

__all__ = ["ingest_csv", "ingest_covariates", "dumps", "fit_to_dict", "fit_from_dict", "SCHEMA_VERSION"]


def _parse_count(text):
    try:
        value = int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            return None
        if not f.is_integer():
            return None
        value = int(f)
    return value if value >= 0 else None


def _read_columns(path, response_name, covariate_names):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise DataError(f"duplicate column name(s) in header: {', '.join(dupes)}")
        wanted = ([response_name] if response_name is not None else []) + covariate_names
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"column(s) not found in {path}: {', '.join(missing)}")
        ix = [header.index(c) for c in covariate_names]
        ys, xs, problems = [], [], []
        for row_number, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                problems.append(f"row {row_number}: expected {len(header)} fields, got {len(row)}")
                continue
            if response_name is not None:
                cell = row[header.index(response_name)]
                y = _parse_count(cell.strip())
                if y is None:
                    problems.append(
                        f"row {row_number}, column {response_name!r}: {cell!r} is not a non-negative integer"
                    )
                ys.append(y)
            values = []
            for name, j in zip(covariate_names, ix):
                try:
                    v = float(row[j])
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    problems.append(f"row {row_number}, column {name!r}: {row[j]!r} is missing or not a number")
                values.append(v)
            xs.append(values)
    if problems:
        shown = problems[:20]
        more = f" (and {len(problems) - 20} more)" if len(problems) > 20 else ""
        raise DataError("invalid rows in input:\n  " + "\n  ".join(shown) + more)
    if not xs:
        raise DataError(f"{path} contains no data rows")
    return ys, np.array(xs, dtype=float).reshape(len(xs), len(covariate_names))


def ingest_csv(path, response_name: str, covariate_names=(), add_intercept: bool = True) -> Dataset:
    """Read an RFC-4180 CSV with a header row into a :class:`Dataset`.

    The response must parse as a non-negative integer ("3" or "3.0"; "2.5"
    is rejected); covariates as reals. Any row with an empty or
    unparseable selected cell aborts the load, naming the offending rows
    (1-based data rows, header excluded).
    """
    covariate_names = list(covariate_names)
    if response_name in covariate_names:
        raise DataError(f"response column {response_name!r} is also listed as a covariate")
    ys, x = _read_columns(path, response_name, covariate_names)
    return Dataset(np.array(ys, dtype=np.int64), x, tuple(covariate_names), add_intercept)


def ingest_covariates(path, covariate_names) -> np.ndarray:
    """Covariate matrix only, with the same validation as :func:`ingest_csv`."""
    return _read_columns(path, None, list(covariate_names))[1]


def _encode(obj, out):
    if isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        out.append(format(value, ".17g") if math.isfinite(value) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(key)) + ": ")
            _encode(value, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, value in enumerate(obj.tolist() if isinstance(obj, np.ndarray) else obj):
            if i:
                out.append(", ")
            _encode(value, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with every float written to 17 significant digits.

    Non-finite floats become ``null``. Output is single-line and key order
    follows insertion order, so identical inputs give identical bytes.
    """
    out = []
    _encode(obj, out)
    return "".join(out)


def _array(values):
    return np.array([math.nan if v is None else v for v in values], dtype=float)


def fit_to_dict(fit) -> dict:
    r = fit.result
    d = {
        "model": fit.model,
        "covariate_names": list(fit.covariate_names),
        "add_intercept": bool(fit.add_intercept),
        "parameter_names": list(r.parameter_names),
        "estimates": r.estimates,
        "std_errors": r.std_errors,
        "vcov": r.vcov,
        "loglik": r.loglik,
        "aic": r.aic,
        "bic": r.bic,
        "n_obs": r.n_obs,
        "n_params": r.n_params,
        "converged": r.converged,
        "iterations": r.iterations,
        "message": r.message,
        "coefficients": fit.coefficients,
    }
    if isinstance(fit, DWRegressionFit):
        d["beta"] = fit.beta
    if isinstance(fit, NBFit):
        d["k"] = fit.k
        d["at_boundary"] = fit.at_boundary
    return d


def fit_from_dict(d: dict):
    """Rebuild a fitted model from :func:`fit_to_dict` output (after a JSON round trip)."""
    n = len(d["estimates"])
    vcov = np.array([_array(row) for row in d["vcov"]]).reshape(n, n)
    result = FitResult(
        parameter_names=tuple(d["parameter_names"]),
        estimates=_array(d["estimates"]),
        loglik=d["loglik"],
        vcov=vcov,
        converged=bool(d["converged"]),
        n_obs=int(d["n_obs"]),
        iterations=int(d.get("iterations", 0)),
        message=d.get("message", ""),
    )
    args = (_array(d["coefficients"]), result, tuple(d["covariate_names"]), bool(d["add_intercept"]))
    model = d["model"]
    if model == "dw":
        return DWRegressionFit(*args, beta=float(d["beta"]))
    if model == "poisson":
        return PoissonFit(*args)
    if model == "nb":
        k = d["k"]
        return NBFit(*args, k=math.inf if k is None else float(k), at_boundary=bool(d["at_boundary"]))
    raise DataError(f"unknown model {model!r} in fit file")
