"""Command-line entry point: ``asymsphere <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 validation or PSD failure,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .asymmetry import AsymmetricCovariance
from .covariance import ModelError, preset, spec_from_dict, spec_to_dict, validate_params
from .data import IngestionError, read_csv, write_csv, write_json
from .estimate import EstimationError, ParameterVector, Variant, fit
from .experiments import ConfigError, ExperimentConfig, PipelineConfig, run_bias_study, run_data_pipeline, run_score_study
from .gegenbauer import QuadratureError, check_psd_sequence, extract_schoenberg
from .geometry import GeometryError, km_to_radians, paper_grid
from .predict import drop_one_cv, drop_one_table
from .simulate import FactorizationError, simulate_field

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

logger = logging.getLogger("asymsphere")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(doc: dict, out_dir, name: str) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))
    if out_dir is not None:
        write_json(Path(out_dir) / name, doc)


def _variant(text: str) -> Variant:
    try:
        return Variant.parse(text)
    except EstimationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _cutoff(args) -> float:
    if args.cutoff_km is not None:
        return km_to_radians(args.cutoff_km)
    return args.cutoff_rad


def _truth_from_args(args) -> AsymmetricCovariance:
    variant = Variant(args.eta is not None, args.separable)
    doc = {"sigma2_1": args.sigma2[0], "sigma2_2": args.sigma2[1], "rho12": args.rho12,
           "c": args.c[0], "c11": args.c[0], "c22": args.c[1],
           "eta": args.eta if args.eta is not None else 0.0,
           "alpha1": args.alpha[0], "alpha2": args.alpha[1]}
    return ParameterVector.from_dict(variant, doc).to_model(args.model)


def cmd_simulate(args) -> int:
    model = _truth_from_args(args)
    report = validate_params(model.base)
    if not report:
        print(report.summary(), file=sys.stderr)
        return EXIT_VALIDATION
    sites = paper_grid(args.n_per_axis, not args.literal_grid)
    obs = simulate_field(model, sites, seed=args.seed, replicate=args.replicate)
    out_dir = Path(args.out_dir or ".")
    path = out_dir / args.output
    sidecar = {"model": args.model, "spec": spec_to_dict(model.base),
               "asymmetry": model.asym.to_dict() if model.asym else None,
               "grid": {"n_per_axis": args.n_per_axis, "pole_safe": not args.literal_grid},
               **obs.meta}
    write_csv(obs, path, sidecar)
    print(json.dumps({"csv": str(path), "n": len(obs), **obs.meta}, sort_keys=True))
    return EXIT_OK


def cmd_check_psd(args) -> int:
    if args.spec is not None:
        spec = spec_from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = preset(args.model, sigma2=args.sigma2, rho12=args.rho12, c=args.c,
                      separable=args.separable)
    seq = extract_schoenberg(spec, d=args.d, K=args.K, n_quad=args.n_quad)
    report = check_psd_sequence(seq, tol=args.tol)
    validity = validate_params(spec)
    doc = {"spec": spec_to_dict(spec), "K": seq.K, "residual": seq.residual, "tol": report.tol,
           "psd": report.ok, "failures": [{"k": k, "min_eigenvalue": v} for k, v in report.failures],
           "min_eigenvalue": float(np.min(report.min_eigenvalues)),
           "validity_conditions": validity.ok, "validity_summary": validity.summary()}
    _emit(doc, args.out_dir, "check_psd.json")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _fit_from_args(args, data):
    return fit(args.model, args.variant, data, cutoff=_cutoff(args), budget=args.budget,
               starts=args.starts, seed=args.seed)


def cmd_fit(args) -> int:
    data = read_csv(args.data)
    res = _fit_from_args(args, data)
    _emit(res.to_dict(), args.out_dir, "fit.json")
    return EXIT_OK if math.isfinite(res.objective) else EXIT_NUMERICAL


def cmd_cv(args) -> int:
    data = read_csv(args.data, min_rows=2)
    if args.fit_json is not None:
        doc = json.loads(Path(args.fit_json).read_text())
        variant = Variant.parse(doc["variant"])
        model = ParameterVector.from_dict(variant, doc["estimate"], data.dim).to_model(doc.get("family", args.model))
    else:
        model = _fit_from_args(args, data).model()
    scores = drop_one_cv(model, data)
    _emit(scores.to_dict(), args.out_dir, "cv.json")
    out = Path(args.out_dir or ".") / "cv_points.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "var", "observed", "predicted", "variance", "error"])
        for row in drop_one_table(model, data):
            w.writerow([row[0], row[1]] + [repr(v) for v in row[2:]])
    return EXIT_OK


def _study_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    doc = cfg.to_dict()
    if args.out_dir is not None:
        doc["out_dir"] = args.out_dir
    if args.seed_given:
        doc["seed"] = args.seed
    return ExperimentConfig.from_dict(doc)


def cmd_bias_study(args) -> int:
    summary = run_bias_study(_study_config(args), threads=args.threads)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if all(c["valid"] for c in summary["cells"]) else EXIT_NUMERICAL


def cmd_score_study(args) -> int:
    table = run_score_study(_study_config(args), threads=args.threads)
    print(table.render())
    return EXIT_OK if all(r["valid"] for r in table.rows) else EXIT_NUMERICAL


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig(family=args.model, cutoff=_cutoff(args), starts=args.starts,
                         budget=args.budget, seed=args.seed, out_dir=args.out_dir)
    report = run_data_pipeline(args.data, cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset flag from overwriting a global one
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes for studies (default 1)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for result files")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="asymsphere", parents=[common],
                     description="Asymmetric multivariate Gaussian random fields on spheres.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_args(p, eta=True):
        p.add_argument("--model", choices=("M1", "M2", "M3"), default="M1")
        p.add_argument("--sigma2", type=float, nargs=2, default=(1.0, 1.0))
        p.add_argument("--rho12", type=float, default=0.5)
        p.add_argument("--c", type=float, nargs=2, default=(0.1, 0.2), metavar=("C11", "C22"))
        p.add_argument("--separable", action="store_true", help="common scale C11")
        if eta:
            p.add_argument("--eta", type=float, default=None, help="rotation angle (omit for symmetric)")
            p.add_argument("--alpha", type=float, nargs=2, default=(math.pi / 2, math.pi / 2))

    def fit_args(p):
        p.add_argument("--model", choices=("M1", "M2", "M3"), default="M1")
        p.add_argument("--variant", type=_variant, default=Variant(True, False),
                       help="{sym,asym}x{sep,nonsep}, e.g. asymxnonsep")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--cutoff-rad", type=float, default=1.0)
        g.add_argument("--cutoff-km", type=float, default=None)
        p.add_argument("--starts", type=int, default=5)
        p.add_argument("--budget", type=int, default=5000)

    p = sub.add_parser("simulate", parents=[common], help="simulate one field on the grid")
    model_args(p)
    p.add_argument("--n-per-axis", type=int, default=15)
    p.add_argument("--literal-grid", action="store_true", help="colatitudes from 0 (poles deduplicated)")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--output", default="field.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-psd", parents=[common], help="Schoenberg-coefficient PSD check")
    model_args(p, eta=False)
    p.add_argument("--spec", default=None, help="JSON model spec instead of a preset")
    p.add_argument("--d", type=int, choices=(1, 2), default=2)
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--n-quad", type=int, default=400)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_check_psd)

    p = sub.add_parser("fit", parents=[common], help="composite-likelihood fit of a CSV")
    p.add_argument("data")
    fit_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", parents=[common], help="drop-one cross-validation scores")
    p.add_argument("data")
    p.add_argument("--fit-json", default=None, help="FitResult JSON from 'fit' (otherwise fit first)")
    fit_args(p)
    p.set_defaults(func=cmd_cv)

    for name, func in (("bias-study", cmd_bias_study), ("score-study", cmd_score_study)):
        p = sub.add_parser(name, parents=[common], help=f"run the {name.replace('-', ' ')}")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.set_defaults(func=func)

    p = sub.add_parser("pipeline", parents=[common], help="fit and compare Models 1-4 on a CSV")
    p.add_argument("data")
    p.add_argument("--model", choices=("M1", "M2", "M3"), default="M1")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--cutoff-rad", type=float, default=1.0)
    g.add_argument("--cutoff-km", type=float, default=None)
    p.add_argument("--starts", type=int, default=1)
    p.add_argument("--budget", type=int, default=5000)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = hasattr(args, "seed")
    for name, default in (("seed", 0), ("threads", 1), ("out_dir", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (ConfigError, IngestionError, ModelError, GeometryError, QuadratureError, KeyError,
            json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FactorizationError, EstimationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
