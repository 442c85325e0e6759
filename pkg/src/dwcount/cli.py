"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import SCHEMA_VERSION, dumps, fit_from_dict, fit_to_dict, ingest_covariates, ingest_csv
from .diagnostics import (
    dispersion_ratio_report,
    frequency_table,
    information_criteria,
    likelihood_ratio_test,
    qq_envelope,
    randomized_quantile_residuals,
)
from .distribution import TruncationPolicy
from .errors import DataError, DWCountError, NumericalError
from .regression import (
    Dataset,
    DWRegressionFit,
    fit_dw_regression,
    fit_nb_regression,
    fit_poisson_glm,
    interpret_coefficients,
)
from .simulation import SimulationStudyConfig, dispersion_map, run_simulation_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
MODELS = ("dw", "poisson", "nb")
FITTERS = {"dw": fit_dw_regression, "poisson": fit_poisson_glm, "nb": fit_nb_regression}
DEFAULT_Q_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_BETA_GRID = (0.5, 1.0, 1.3, 1.6, 2.0, 2.5, 5.0)


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    response: str | None = None
    covariates: tuple = ()
    models: tuple = ("dw",)
    seed: int | None = None
    output_format: str = "json"
    output: str | None = None
    group_count: int = 10
    policy: TruncationPolicy = field(default_factory=TruncationPolicy)
    add_intercept: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.response is not None and self.response in self.covariates:
            raise DataError(f"response column {self.response!r} cannot also be a covariate")
        if self.subcommand in ("diagnose", "simulate") and self.seed is None:
            raise DataError(f"{self.subcommand} needs an explicit --seed")


class Report:
    """Named tables plus a JSON payload; rendered as json, csv or text."""

    def __init__(self, payload: dict):
        self.payload = payload
        self.tables: list[tuple[str, list[dict]]] = []

    def table(self, name, rows):
        self.tables.append((name, rows))

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return dumps(self.payload) + "\n"
        if fmt == "csv":
            return "\n".join(_csv_text(rows) for _, rows in self.tables)
        return _text(self.tables, self.payload)


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return "" if value is None else str(value)


def _csv_text(rows):
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _text(tables, payload):
    lines = [f"dwcount {payload.get('command', '')}"]
    if payload.get("seed") is not None:
        lines.append(f"seed: {payload['seed']}")
    for name, rows in tables:
        lines.append("")
        lines.append(f"== {name} ==")
        if not rows:
            continue
        cols = list(rows[0])
        cells = [[_short(r[c]) for c in cols] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        for row in cells:
            lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _short(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return "" if value is None else str(value)


def coefficient_rows(model_name, fit):
    r = fit.result
    rows = []
    effects = {e.name: e.median_effect for e in interpret_coefficients(fit)} if isinstance(fit, DWRegressionFit) else {}
    for name, est, se in zip(r.parameter_names, r.estimates, r.std_errors):
        rows.append({
            "model": model_name,
            "term": name,
            "estimate": float(est),
            "std_error": float(se),
            "median_effect": effects.get(name),
        })
    return rows


def summary_row(model_name, fit):
    r = fit.result
    return {
        "model": model_name,
        "n_obs": r.n_obs,
        "n_params": r.n_params,
        "loglik": r.loglik,
        "aic": r.aic,
        "bic": r.bic,
        "shape": getattr(fit, "beta", getattr(fit, "k", None)),
        "converged": r.converged,
    }


def _load(cfg: RunConfig) -> Dataset:
    return ingest_csv(cfg.input, cfg.response, cfg.covariates, cfg.add_intercept)


def _fit_models(data, models):
    return {m: FITTERS[m](data) for m in models}


def cmd_fit(cfg: RunConfig) -> Report:
    data = _load(cfg)
    fits = _fit_models(data, cfg.models)
    rep = Report({
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "input": str(cfg.input),
        "response": cfg.response,
        "fits": [dict(fit_to_dict(f), median_effects=_effects(f)) for f in fits.values()],
    })
    rep.table("coefficients", [row for m, f in fits.items() for row in coefficient_rows(m, f)])
    rep.table("summary", [summary_row(m, f) for m, f in fits.items()])
    return rep


def _effects(fit):
    if not isinstance(fit, DWRegressionFit):
        return None
    return [{"term": e.name, "alpha": e.alpha, "median_effect": e.median_effect} for e in interpret_coefficients(fit)]


def _marginal(data: Dataset) -> Dataset:
    return Dataset(data.response, np.zeros((data.n_obs, 0)), (), True)


def cmd_compare(cfg: RunConfig) -> Report:
    data = _load(cfg)
    fits = _fit_models(data, MODELS)
    ic = information_criteria(fits)
    lr = likelihood_ratio_test(fits["poisson"].result, fits["nb"].result)
    marginal = _marginal(data)
    lr_marginal = likelihood_ratio_test(fit_poisson_glm(marginal).result, fit_nb_regression(marginal).result)
    lr_rows = [
        {"test": "nb_vs_poisson_regression", "statistic": lr.statistic, "df": lr.df, "p_value": lr.p_value},
        {"test": "nb_vs_poisson_response_only", "statistic": lr_marginal.statistic, "df": lr_marginal.df, "p_value": lr_marginal.p_value},
    ]
    rep = Report({
        "schema_version": SCHEMA_VERSION,
        "command": "compare",
        "input": str(cfg.input),
        "response": cfg.response,
        "information_criteria": ic,
        "best_by_aic": min(ic, key=lambda r: r["aic"])["model"],
        "best_by_bic": min(ic, key=lambda r: r["bic"])["model"],
        "likelihood_ratio_tests": lr_rows,
        "fits": [dict(fit_to_dict(f), median_effects=_effects(f)) for f in fits.values()],
    })
    rep.table("information_criteria", [summary_row(m, f) for m, f in fits.items()])
    rep.table("coefficients", [row for m, f in fits.items() for row in coefficient_rows(m, f)])
    rep.table("likelihood_ratio_tests", lr_rows)
    return rep


def cmd_diagnose(cfg: RunConfig) -> Report:
    data = _load(cfg)
    model = cfg.models[0]
    fit = FITTERS[model](data)
    seed = cfg.seed
    res = randomized_quantile_residuals(fit, data, seed)
    env = qq_envelope(fit, data, cfg.extra["envelope_replicates"], cfg.extra["band_level"], seed)
    theo = fit.variance(data.covariates, cfg.policy) if model == "dw" else None
    vr = dispersion_ratio_report(fit, data, cfg.group_count, theo)
    freq = frequency_table(fit, data, cfg.extra.get("tail_threshold"))
    vr_rows = [dict(vars(g)) for g in vr.groups]
    freq_rows = [dict(vars(r)) for r in freq]
    rep = Report({
        "schema_version": SCHEMA_VERSION,
        "command": "diagnose",
        "seed": seed,
        "input": str(cfg.input),
        "model": model,
        "fit": fit_to_dict(fit),
        "residuals": {
            "ks_statistic": res.ks_statistic,
            "ks_p_value": res.ks_p_value,
            "values": res.residuals,
            "degenerate": res.degenerate,
        },
        "qq_envelope": {
            "replicate_count": env.replicate_count,
            "band_level": env.band_level,
            "outside_fraction": env.outside_fraction,
            "theoretical": env.theoretical,
            "sorted_residuals": env.residuals,
            "lower": env.lower,
            "upper": env.upper,
        },
        "dispersion": {"group_count": vr.group_count, "groups": vr_rows},
        "frequency_table": freq_rows,
    })
    rep.table("residual_test", [{"model": model, "seed": seed, "ks_statistic": res.ks_statistic, "ks_p_value": res.ks_p_value, "envelope_outside_fraction": env.outside_fraction}])
    rep.table("dispersion", vr_rows)
    rep.table("frequency_table", freq_rows)
    rep.table("qq_envelope", [
        {"theoretical": t, "residual": r, "lower": lo, "upper": hi}
        for t, r, lo, hi in zip(env.theoretical, env.residuals, env.lower, env.upper)
    ])
    return rep


def cmd_simulate(cfg: RunConfig) -> Report:
    x = cfg.extra
    if x["dispersion_map"]:
        m = dispersion_map(x["q_grid"], x["beta_grid"], x["n_per_cell"], cfg.seed)
        rows = [
            {"beta": b, "q": q, "vr_poisson": m.vr_poisson[i, j], "vr_nb": m.vr_nb[i, j], "nb_boundary": bool(m.nb_boundary[i, j])}
            for i, b in enumerate(m.beta_grid)
            for j, q in enumerate(m.q_grid)
        ]
        rep = Report({
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "experiment": "dispersion_map",
            "seed": cfg.seed,
            "n_per_cell": m.n_per_cell,
            "q_grid": m.q_grid,
            "beta_grid": m.beta_grid,
            "vr_poisson": m.vr_poisson,
            "vr_nb": m.vr_nb,
            "nb_boundary": m.nb_boundary,
        })
        rep.table("dispersion_map", rows)
        return rep
    sc = SimulationStudyConfig(
        n_obs=x["n_obs"],
        replicate_count=x["replicates"],
        true_alpha=tuple(x["alpha"]),
        true_beta=x["beta"],
        master_seed=cfg.seed,
    )
    res = run_simulation_study(sc, workers=x["workers"])
    rows = [dict(vars(p)) for p in res.parameters]
    rep = Report({
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "experiment": "parameter_recovery",
        "seed": cfg.seed,
        "n_obs": sc.n_obs,
        "replicate_count": sc.replicate_count,
        "true_alpha": list(sc.true_alpha),
        "true_beta": sc.true_beta,
        "parameters": rows,
        "failed_replicates": [{"replicate": i, "error": msg} for i, msg in res.failures],
    })
    rep.table("parameter_recovery", rows)
    return rep


def cmd_predict(cfg: RunConfig) -> Report:
    fit_path = Path(cfg.extra["fit"])
    if not fit_path.is_file():
        raise DataError(f"fit file not found: {fit_path}")
    doc = json.loads(fit_path.read_text())
    entries = doc.get("fits", [doc.get("fit", doc)])
    wanted = cfg.extra.get("model")
    entry = next((e for e in entries if wanted in (None, e["model"])), None)
    if entry is None:
        raise DataError(f"no {wanted!r} fit in {fit_path}")
    fit = fit_from_dict(entry)
    names = list(fit.covariate_names)
    x = ingest_covariates(cfg.input, names)
    taus = cfg.extra["tau"]
    eta = fit.linear_predictor(x)
    out = {"row": np.arange(1, x.shape[0] + 1), "linear_predictor": eta}
    if isinstance(fit, DWRegressionFit):
        out["q"] = fit.q(x)
        out["median"] = fit.quantile(0.5, x)
        for tau in taus:
            out[f"quantile_{tau:g}"] = fit.quantile(tau, x)
        out["mean"] = fit.mean(x, cfg.policy)
    else:
        from scipy import stats

        mu = fit.mean(x)
        out["mean"] = mu
        dist = stats.poisson(mu) if fit.model == "poisson" else stats.nbinom(fit.k, fit.k / (fit.k + mu))
        out["median"] = dist.ppf(0.5).astype(np.int64)
        for tau in taus:
            out[f"quantile_{tau:g}"] = dist.ppf(tau).astype(np.int64)
    rows = [{k: (v[i].item() if hasattr(v[i], "item") else v[i]) for k, v in out.items()} for i in range(x.shape[0])]
    rep = Report({
        "schema_version": SCHEMA_VERSION,
        "command": "predict",
        "model": fit.model,
        "fit_file": str(fit_path),
        "predictions": rows,
    })
    rep.table("predictions", rows)
    return rep


COMMANDS = {
    "fit": cmd_fit,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dwcount", description="Discrete Weibull count regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common_output(p):
        p.add_argument("--format", choices=("json", "csv", "text"), default="json")
        p.add_argument("--output", "-o", help="write to this file instead of stdout")

    def data_args(p, response_required=True):
        p.add_argument("--input", "-i", required=True, help="CSV file with a header row")
        p.add_argument("--response", "-y", required=response_required)
        p.add_argument("--covariates", "-x", nargs="*", default=[])
        p.add_argument("--no-intercept", action="store_true")

    def truncation(p):
        p.add_argument("--term-tolerance", type=float, default=1e-12)
        p.add_argument("--max-terms", type=int, default=10**7)

    p = sub.add_parser("fit", help="fit one or more models")
    data_args(p)
    p.add_argument("--model", "-m", nargs="+", choices=MODELS, default=["dw"])
    common_output(p)

    p = sub.add_parser("compare", help="fit DW, Poisson and NB; AIC/BIC and LR tests")
    data_args(p)
    common_output(p)

    p = sub.add_parser("diagnose", help="residuals, Q-Q envelope, VR and frequency tables")
    data_args(p)
    p.add_argument("--model", "-m", choices=MODELS, default="dw")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--envelope-replicates", type=int, default=99)
    p.add_argument("--band-level", type=float, default=0.95)
    p.add_argument("--tail-threshold", type=int, default=None)
    truncation(p)
    common_output(p)

    p = sub.add_parser("simulate", help="parameter-recovery study or dispersion map")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--recovery", "--table1", dest="recovery", action="store_true",
                      help="DW regression parameter-recovery study")
    mode.add_argument("--dispersion-map", action="store_true", help="VR over a (q, beta) grid")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--n-obs", type=int, default=300)
    p.add_argument("--alpha", type=float, nargs=3, default=[0.5, 0.4, -0.3])
    p.add_argument("--beta", type=float, default=1.6)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--q-grid", type=float, nargs="+", default=list(DEFAULT_Q_GRID))
    p.add_argument("--beta-grid", type=float, nargs="+", default=list(DEFAULT_BETA_GRID))
    p.add_argument("--n-per-cell", type=int, default=100_000)
    common_output(p)

    p = sub.add_parser("predict", help="fitted medians, quantiles and means from a saved fit")
    p.add_argument("--fit", required=True, help="JSON written by `fit` or `compare`")
    p.add_argument("--model", "-m", choices=MODELS, default=None, help="pick a model when the file holds several")
    p.add_argument("--input", "-i", required=True, help="CSV with the covariate columns")
    p.add_argument("--tau", type=float, nargs="*", default=[])
    truncation(p)
    common_output(p)
    return parser


def _config_from_args(args) -> RunConfig:
    cmd = args.subcommand
    extra = {}
    models = ("dw",)
    if cmd == "fit":
        models = tuple(dict.fromkeys(args.model))
    elif cmd == "diagnose":
        models = (args.model,)
        extra = {
            "envelope_replicates": args.envelope_replicates,
            "band_level": args.band_level,
            "tail_threshold": args.tail_threshold,
        }
    elif cmd == "simulate":
        extra = {k: getattr(args, k) for k in (
            "recovery", "dispersion_map", "replicates", "n_obs", "alpha", "beta",
            "workers", "q_grid", "beta_grid", "n_per_cell",
        )}
    elif cmd == "predict":
        extra = {"fit": args.fit, "model": args.model, "tau": args.tau}
    policy = TruncationPolicy(getattr(args, "term_tolerance", 1e-12), getattr(args, "max_terms", 10**7))
    return RunConfig(
        subcommand=cmd,
        input=getattr(args, "input", None),
        response=getattr(args, "response", None),
        covariates=tuple(getattr(args, "covariates", ()) or ()),
        models=models,
        seed=getattr(args, "seed", None),
        output_format=args.format,
        output=args.output,
        group_count=getattr(args, "groups", 10),
        policy=policy,
        add_intercept=not getattr(args, "no_intercept", False),
        extra=extra,
    )


def run(cfg: RunConfig) -> str:
    return COMMANDS[cfg.subcommand](cfg).render(cfg.output_format)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except DataError as exc:
        parser.error(str(exc))
    try:
        text = run(cfg)
    except DataError as exc:
        print(f"dwcount {cfg.subcommand}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, OverflowError, FloatingPointError) as exc:
        print(f"dwcount {cfg.subcommand}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DWCountError as exc:
        print(f"dwcount {cfg.subcommand}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
