"""Command-line interface: ``ordicc fit|simulate|generate``.

Exit codes: 0 success (per-model failures are reported, not fatal),
2 invalid input, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import REPORT_SCHEMA, __version__
from .analysis import analyze
from .estimation.clmm import FitOptions
from .estimation.lmm import LmmOptions
from .exceptions import InvalidInputError
from .io import dataset_from_table, format_csv, parse_csv
from .likelihood import QuadratureRule
from .model_core import validate
from .simulation import SimConfig, default_threads, generate_dataset, replicates_to_csv, run_simulation

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IO = 3

MODEL_NAMES = {"probit": "clmm_probit", "logistic": "clmm_logistic", "naive": "naive_lmm"}


class _Failure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _model_block(analysis, data) -> dict:
    est, fit = analysis.icc, analysis.fit
    block = {
        "model": MODEL_NAMES[analysis.estimator],
        "link": analysis.estimator if analysis.estimator != "naive" else "identity",
        "icc": None,
        "ci": None,
        "ci_method": None,
        "level": None,
        "converged": analysis.converged,
        "degenerate": None,
        "n_obs": data.n_obs,
        "n_clusters": data.n_clusters,
        "n_ears": data.n_ears,
        "variance_components": None,
        "loglik": None,
        "gradient_norm": None,
        "note": "",
        "error": analysis.error or None,
    }
    if est is not None:
        block.update(
            icc=_finite(est.value),
            ci=None if est.ci is None else [_finite(est.ci[0]), _finite(est.ci[1])],
            ci_method=est.ci_method,
            level=est.level,
            degenerate=est.degenerate,
            note=est.note,
        )
    if fit is not None:
        block["loglik"] = _finite(fit.loglik)
        if analysis.estimator == "naive":
            comps = {"sigma_b_sq": fit.sigma_b_sq_hat, "sigma_eps_sq": fit.sigma_eps_sq_hat}
            if fit.nested:
                comps["sigma_c_sq"] = fit.sigma_c_sq_hat
            block["gradient_norm"] = _finite(np.max(np.abs(fit.gradient))) if fit.gradient is not None else None
            block["estimation"] = fit.method
        else:
            comps = {"sigma_b_sq": fit.sigma_b_sq}
            if fit.nested:
                comps["sigma_c_sq"] = fit.sigma_c_sq
            block["gradient_norm"] = _finite(fit.gradient_norm)
            block["gradient_method"] = fit.gradient_method
            block["quad_nodes"] = fit.quad_nodes
        block["variance_components"] = {k: _finite(v) for k, v in comps.items()}
    return block


def _version():
    return {"tool": f"ordicc {__version__}", "schema": REPORT_SCHEMA}


def _read_text(path):
    try:
        if path == "-":
            return sys.stdin.read()
        with open(path, newline="", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise _Failure(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from exc


def _write_text(path, text):
    try:
        if path is None or path == "-":
            sys.stdout.write(text)
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise _Failure(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from exc


def _format_text(report) -> str:
    lines = [f"input: {report['input'].get('path', '')}  ({report['input'].get('n_rows', '')} rows)"]
    header = f"{'model':<14} {'icc':>8} {'ci_lower':>9} {'ci_upper':>9}  {'ci_method':<17} {'converged':<9} note"
    lines.append(header)
    for m in report["models"]:
        def num(v):
            return "NA" if v is None else f"{v:.4f}"

        lo, hi = (m["ci"] or [None, None])
        note = m["error"] or m["note"] or ""
        lines.append(f"{m['model']:<14} {num(m['icc']):>8} {num(lo):>9} {num(hi):>9}  "
                     f"{m['ci_method'] or 'NA':<17} {str(m['converged']).lower():<9} {note}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    text = _read_text(args.csv)
    covariates = None
    if args.covariates is not None:
        covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
    table = parse_csv(text, covariates)
    data = dataset_from_table(table, nested=args.nested, ear=args.ear)
    problems = validate(data)
    if problems:
        raise InvalidInputError("\n".join(f"{v.field}: {v.message}" for v in problems))
    links = ["probit", "logistic"] if args.link == "all" else [args.link]
    estimators = links + (["naive"] if args.naive else [])
    rule = None if args.quad_nodes is None else QuadratureRule(args.quad_nodes)
    options = FitOptions()
    lmm_options = LmmOptions(method=args.naive_method)
    analyses = [analyze(data, est, args.level, rule=rule, options=options, lmm_options=lmm_options)
                for est in estimators]
    report = {
        "input": {
            "type": "csv",
            "path": args.csv,
            "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
            "n_rows": data.n_obs,
            "nesting": data.nesting,
            "ear": args.ear,
            "covariates": list(data.covariate_names),
            "n_categories": data.n_categories,
        },
        "models": [_model_block(a, data) for a in analyses],
        "version": _version(),
        "seed": None,
    }
    if args.format == "json":
        out = json.dumps(report, indent=2, allow_nan=False) + "\n"
    else:
        out = _format_text(report)
    _write_text(args.out, out)
    return EXIT_OK


_INLINE = {
    "design": str,
    "error_family": str,
    "n_subjects": int,
    "n_ears": int,
    "n_obs": int,
    "beta_star": float,
    "sigma_b_star_sq": float,
    "sigma_c_star_sq": float,
    "error_variance": float,
    "logistic_scale": float,
    "lattice_anchor": float,
    "lattice_spacing": float,
    "n_replicates": int,
    "ci_level": float,
    "seed": int,
    "quad_nodes": int,
}


def _load_config(args) -> SimConfig:
    mapping = {}
    if args.config:
        try:
            mapping = json.loads(_read_text(args.config))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{args.config}: line {exc.lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(mapping, dict):
            raise InvalidInputError(f"{args.config}: configuration must be a JSON object")
    for name in _INLINE:
        value = getattr(args, name, None)
        if value is not None:
            mapping[name] = value
    return SimConfig.from_mapping(mapping)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with simulation settings; inline flags override it")
    for name, typ in _INLINE.items():
        flag = "--" + name.replace("_", "-")
        if name == "design":
            p.add_argument(flag, choices=["single", "nested"])
        elif name == "error_family":
            p.add_argument(flag, choices=["normal", "logistic"])
        else:
            p.add_argument(flag, type=typ)


def cmd_simulate(args) -> int:
    config = _load_config(args)
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise InvalidInputError("--threads must be >= 1")
    summary, results = run_simulation(config, threads=threads)
    _write_text(args.out, summary.to_csv())
    if args.replicates_out:
        _write_text(args.replicates_out, replicates_to_csv(results))
    if args.report:
        digest = hashlib.sha256(json.dumps(config.to_mapping(), sort_keys=True).encode()).hexdigest()
        report = {
            "input": {"type": "simulation", "config": config.to_mapping(), "config_sha256": digest,
                      "true_icc": config.true_icc, "n_regenerated": summary.n_regenerated},
            "models": [
                {"model": MODEL_NAMES[r.estimator], "bias": _finite(r.bias), "sd": _finite(r.sd),
                 "coverage": _finite(r.coverage), "n_estimates": r.n_estimates,
                 "n_ci_unavailable": r.n_ci_unavailable, "n_nonconverged": r.n_nonconverged,
                 "n_failed": r.n_failed,
                 "ci_method": "profile_transform" if r.estimator != "naive" and config.design == "single" else "delta"}
                for r in summary.rows
            ],
            "version": _version(),
            "seed": config.seed,
        }
        _write_text(args.report, json.dumps(report, indent=2, allow_nan=False) + "\n")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = _load_config(args)
    if args.replicate < 0:
        raise InvalidInputError("--replicate must be >= 0")
    data = generate_dataset(config, args.replicate)
    _write_text(args.out, format_csv(data))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordicc", description="Adjusted ICC for clustered ordinal outcomes.")
    parser.add_argument("--version", action="version", version=f"ordicc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit models to a CSV dataset and report ICCs")
    p.add_argument("csv", help="input CSV (subject_id,ear_id,measurement,category,x1,...); '-' for stdin")
    p.add_argument("--link", choices=["probit", "logistic", "all"], default="all")
    p.add_argument("--naive", action="store_true", help="also fit the linear mixed model to the category codes")
    p.add_argument("--naive-method", choices=["reml", "ml"], default="reml",
                   help="variance-component criterion of the linear mixed model")
    p.add_argument("--nested", action="store_true", help="pool ears with subject and ear random intercepts")
    p.add_argument("--ear", help="analyse only rows with this ear_id")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all after 'category')")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--quad-nodes", type=int,
                   help="quadrature nodes per random effect (default: 31 single-level, 15 nested)")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario and write a summary CSV")
    _add_config_flags(p)
    p.add_argument("--threads", type=int, help="worker processes (default: $ORDICC_THREADS or 1)")
    p.add_argument("--out", help="summary CSV path (default: stdout)")
    p.add_argument("--replicates-out", help="per-replicate CSV path")
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="write one simulated dataset as CSV")
    _add_config_flags(p)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "level", None) is not None and not 0 < args.level < 1:
        print("error: --level must be in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "quad_nodes", None) is not None and args.quad_nodes < 1:
        print("error: --quad-nodes must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except _Failure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
