"""Simulation studies and the fit/compare pipeline.

Studies are driven by an :class:`ExperimentConfig`, loaded from JSON and
validated against :data:`CONFIG_SCHEMA`. Every replicate is a pure function
of ``(config, cell, replicate)``: it draws its field from its own Philox
stream, fits, scores and (when an output directory is set) stores its result
in a file of its own. Re-running a study reuses stored replicate files whose
config fingerprint matches, so interrupted runs resume where they stopped.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .covariance import validate_params
from .data import IngestionError, ObservationSet, read_csv, write_json
from .estimate import (CompositeLikelihood, EstimationError, FitResult, ParameterVector,
                       Variant, asymmetry_scan, embed_parameters, fit)
from .geometry import paper_grid
from .predict import drop_one_cv
from .simulate import FactorizationError, FieldSampler

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2
MIN_PIPELINE_ROWS = 10

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "asymsphere experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "models": {"type": "array", "minItems": 1, "uniqueItems": True,
                   "items": {"enum": ["M1", "M2", "M3"]}},
        "separability": {"type": "array", "minItems": 1, "uniqueItems": True,
                         "items": {"enum": ["sep", "nonsep"]}},
        "scenarios": {"type": "array", "minItems": 1, "items": {
            "type": "object", "additionalProperties": False, "required": ["rho12", "eta"],
            "properties": {"rho12": {"type": "number", "minimum": -1, "maximum": 1},
                           "eta": {"type": "number", "minimum": 0, "exclusiveMaximum": math.pi}}}},
        "sigma2": {"type": "array", "items": _positive, "minItems": 2, "maxItems": 2},
        "c": {"type": "array", "items": _positive, "minItems": 2, "maxItems": 2},
        "c_separable": _positive,
        "alpha": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
        "grid": {"type": "object", "additionalProperties": False, "properties": {
            "n_per_axis": {"type": "integer", "minimum": 2},
            "pole_safe": {"type": "boolean"}}},
        "replicates": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "cutoff": {"type": "number", "exclusiveMinimum": 0, "maximum": math.pi},
        "starts": {"type": "integer", "minimum": 1},
        "budget": {"type": "integer", "minimum": 0},
        "scan": {"type": "boolean"},
        "init": {"enum": ["auto", "truth"]},
        "out_dir": {"type": ["string", "null"]},
    },
}


class ConfigError(ValueError):
    pass


def _schema_message(exc: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
    return f"config invalid at {where}: {exc.message}"


@dataclass(frozen=True)
class Cell:
    """One scenario of a study: model, separability and the (rho12, eta) truth."""

    model: str
    separability: str
    rho12: float
    eta: float

    @property
    def separable(self) -> bool:
        return self.separability == "sep"

    @property
    def key(self) -> str:
        return f"{self.model}-{self.separability}-rho{self.rho12:g}-eta{self.eta:g}"

    def to_dict(self) -> dict:
        return {"model": self.model, "separability": self.separability,
                "rho12": self.rho12, "eta": self.eta}


@dataclass(frozen=True)
class ExperimentConfig:
    """Study design. Defaults follow the simulation study at desk scale."""

    models: tuple = ("M1",)
    separability: tuple = ("nonsep",)
    scenarios: tuple = ((0.5, 0.1),)
    sigma2: tuple = (1.0, 1.0)
    c: tuple = (0.1, 0.2)
    c_separable: float = 0.1
    alpha: tuple = (math.pi / 2, math.pi / 2)
    n_per_axis: int = 15
    pole_safe: bool = True
    replicates: int = 100
    seed: int = 0
    cutoff: float = 1.0
    starts: int = 1
    budget: int = 5000
    scan: bool = True
    init: str = "auto"
    out_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "separability", tuple(self.separability))
        object.__setattr__(self, "scenarios", tuple((float(r), float(e)) for r, e in self.scenarios))
        for name in ("sigma2", "c", "alpha"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        try:
            jsonschema.validate(self.to_dict(), CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(_schema_message(exc)) from None
        for cell in self.cells():
            report = validate_params(self.truth(cell).to_model(cell.model).base)
            if not report:
                raise ConfigError(f"true parameters of {cell.key} are invalid: {report.summary()}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        for name in ("models", "separability", "sigma2", "c", "alpha"):
            doc[name] = list(doc[name])
        doc["scenarios"] = [{"rho12": r, "eta": e} for r, e in self.scenarios]
        doc["grid"] = {"n_per_axis": doc.pop("n_per_axis"), "pole_safe": doc.pop("pole_safe")}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(_schema_message(exc)) from None
        kw = {k: v for k, v in doc.items() if k not in ("grid", "scenarios")}
        if "scenarios" in doc:
            kw["scenarios"] = [(s["rho12"], s["eta"]) for s in doc["scenarios"]]
        kw.update(doc.get("grid", {}))
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def study_dict(self) -> dict:
        """The config without its output location, as recorded in results."""
        doc = self.to_dict()
        doc.pop("out_dir")
        return doc

    def fingerprint(self) -> str:
        """Hash of everything that determines replicate results."""
        doc = self.study_dict()
        doc.pop("replicates")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def cells(self) -> list:
        return [Cell(m, s, r, e) for m in self.models for s in self.separability
                for r, e in self.scenarios]

    def truth(self, cell: Cell) -> ParameterVector:
        variant = Variant(True, cell.separable)
        doc = {"sigma2_1": self.sigma2[0], "sigma2_2": self.sigma2[1], "rho12": cell.rho12,
               "c": self.c_separable, "c11": self.c[0], "c22": self.c[1],
               "eta": cell.eta, "alpha1": self.alpha[0], "alpha2": self.alpha[1]}
        return ParameterVector.from_dict(variant, doc)


# --------------------------------------------------------------------------
# replicate machinery

_SAMPLERS: dict = {}


def _sampler(cfg: ExperimentConfig, cell: Cell) -> FieldSampler:
    key = (cfg.fingerprint(), cell)
    if key not in _SAMPLERS:
        sites = paper_grid(cfg.n_per_axis, cfg.pole_safe)
        _SAMPLERS.clear()
        _SAMPLERS[key] = FieldSampler(cfg.truth(cell).to_model(cell.model), sites)
    return _SAMPLERS[key]


def replicate_data(cfg: ExperimentConfig, cell: Cell, replicate: int) -> ObservationSet:
    """The simulated field of one replicate.

    The normal draws depend on ``(seed, replicate)`` only, so all cells share
    common random numbers.
    """
    return _sampler(cfg, cell).draw(cfg.seed, replicate)


def fit_seed(cfg: ExperimentConfig, replicate: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, replicate, 1]).generate_state(1)[0])


def fit_symmetric_asymmetric(family: str, separable: bool, data: ObservationSet,
                             cl: CompositeLikelihood, starts: int = 1, budget: int = 5000,
                             seed: int = 0, scan: bool = True, nested_start: bool = False):
    """Fit the symmetric variant, then the asymmetric one.

    The asymmetric search adds starts from :func:`asymmetry_scan` around the
    symmetric estimate and, with ``nested_start``, from the symmetric estimate
    itself (``eta = 0``), which guarantees a CL at least as high.
    """
    sym, asym = Variant(False, separable), Variant(True, separable)
    f_sym = fit(family, sym, data, objective=cl, starts=starts, budget=budget, seed=seed)
    extra = []
    if budget > 0:
        if nested_start:
            extra.append(embed_parameters(f_sym.estimate, asym))
        if scan:
            extra += asymmetry_scan(family, asym, cl, f_sym.estimate)
    f_asym = fit(family, asym, data, objective=cl, starts=starts, budget=budget, seed=seed,
                 extra_starts=extra)
    return f_sym, f_asym


_FAILURES = (EstimationError, FactorizationError, ArithmeticError, np.linalg.LinAlgError)


def _bias_replicate(cfg: ExperimentConfig, cell: Cell, replicate: int) -> dict:
    data = replicate_data(cfg, cell, replicate)
    truth = cfg.truth(cell)
    cl = CompositeLikelihood(data, cfg.cutoff)
    seed = fit_seed(cfg, replicate)
    if cfg.init == "truth":
        res = fit(cell.model, truth.variant, data, objective=cl, init=truth, starts=cfg.starts,
                  budget=cfg.budget, seed=seed)
    else:
        _, res = fit_symmetric_asymmetric(cell.model, cell.separable, data, cl, cfg.starts,
                                          cfg.budget, seed, cfg.scan)
    if not math.isfinite(res.objective):
        raise EstimationError("objective not finite at the optimum")
    return {"estimate": res.estimate.as_dict(), "objective": res.objective,
            "converged": res.converged, "notes": list(res.identifiability_notes)}


def _score_replicate(cfg: ExperimentConfig, cell: Cell, replicate: int) -> dict:
    data = replicate_data(cfg, cell, replicate)
    cl = CompositeLikelihood(data, cfg.cutoff)
    seed = fit_seed(cfg, replicate)
    if cfg.init == "truth":
        truth = cfg.truth(cell)
        sym_init = ParameterVector.from_dict(Variant(False, cell.separable), truth.as_dict())
        f_sym = fit(cell.model, sym_init.variant, data, objective=cl, init=sym_init,
                    starts=cfg.starts, budget=cfg.budget, seed=seed)
        f_asym = fit(cell.model, truth.variant, data, objective=cl, init=truth,
                     starts=cfg.starts, budget=cfg.budget, seed=seed)
    else:
        f_sym, f_asym = fit_symmetric_asymmetric(cell.model, cell.separable, data, cl, cfg.starts,
                                                 cfg.budget, seed, cfg.scan)
    out = {}
    for label, res in (("S", f_sym), ("A", f_asym)):
        if not math.isfinite(res.objective):
            raise EstimationError(f"{label} objective not finite at the optimum")
        cv = drop_one_cv(res.model(), data)
        out[label] = {"mspe": cv.mspe, "lscore": cv.lscore, "objective": res.objective,
                      "estimate": res.estimate.as_dict(), "clamped": cv.clamped}
    return out


_WORKERS = {"bias": _bias_replicate, "score": _score_replicate}


def _replicate_path(cfg: ExperimentConfig, study: str, cell: Cell, replicate: int) -> Optional[Path]:
    if cfg.out_dir is None:
        return None
    return Path(cfg.out_dir) / "replicates" / study / cell.key / f"r{replicate:05d}.json"


def _run_task(task) -> dict:
    cfg, study, cell, replicate = task
    path = _replicate_path(cfg, study, cell, replicate)
    if path is not None and path.exists():
        try:
            doc = json.loads(path.read_text())
            if doc.get("fingerprint") == cfg.fingerprint():
                return doc
        except json.JSONDecodeError:
            logger.warning("ignoring unreadable replicate file %s", path)
    try:
        doc = {"ok": True, "result": _WORKERS[study](cfg, cell, replicate)}
    except _FAILURES as exc:
        logger.warning("%s replicate %d of %s failed: %s", study, replicate, cell.key, exc)
        doc = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
    doc.update(fingerprint=cfg.fingerprint(), replicate=replicate, cell=cell.to_dict())
    if path is not None:
        write_json(path, doc)
    return doc


def run_replicates(cfg: ExperimentConfig, study: str, threads: int = 1) -> dict:
    """Results of every replicate of every cell, keyed by cell, in replicate order."""
    if cfg.replicates < 1:
        raise ConfigError("replicates must be at least 1")
    tasks = [(cfg, study, cell, r) for cell in cfg.cells() for r in range(cfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            docs = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        docs = [_run_task(t) for t in tasks]
    out = {cell: [] for cell in cfg.cells()}
    for (_, _, cell, _), doc in zip(tasks, docs):
        out[cell].append(doc)
    return out


# --------------------------------------------------------------------------
# bias study


def _wrap(x: np.ndarray) -> np.ndarray:
    return (x + np.pi) % (2 * np.pi) - np.pi


def run_bias_study(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Distribution of ``estimate - truth`` per parameter and cell."""
    results = run_replicates(cfg, "bias", threads)
    cells = []
    for cell, docs in results.items():
        truth = cfg.truth(cell).as_dict()
        ok = [d["result"] for d in docs if d["ok"]]
        failed = len(docs) - len(ok)
        params = {}
        for name, true_value in truth.items():
            est = np.array([r["estimate"][name] for r in ok])
            if est.size == 0:
                continue
            err = _wrap(est - true_value) if name == "alpha1" else est - true_value
            q = np.quantile(est, [0.025, 0.25, 0.5, 0.75, 0.975])
            params[name] = {"truth": true_value, "lo95": q[0], "q25": q[1], "median": q[2],
                            "q75": q[3], "hi95": q[4], "mean_bias": float(np.mean(err)),
                            "median_bias": float(np.median(err)),
                            "bias_se": float(np.std(err, ddof=1) / np.sqrt(err.size)) if err.size > 1 else 0.0}
        cells.append({**cell.to_dict(), "n": len(ok), "failed": failed,
                      "valid": failed <= MAX_FAILURE_RATE * len(docs),
                      "errors": sorted({d["error"] for d in docs if not d["ok"]}),
                      "parameters": _floats(params)})
    summary = {"study": "bias", "config": cfg.study_dict(), "cells": cells}
    if cfg.out_dir is not None:
        write_json(Path(cfg.out_dir) / "bias_study.json", summary)
        _write_bias_csv(Path(cfg.out_dir) / "bias_study.csv", cells)
    return summary


def _write_bias_csv(path: Path, cells: list) -> None:
    lines = ["model,separability,rho12,eta,parameter,truth,lo95,q25,median,q75,hi95,mean_bias,bias_se,n"]
    for c in cells:
        for name, s in c["parameters"].items():
            lines.append(",".join(str(v) for v in (
                c["model"], c["separability"], c["rho12"], c["eta"], name, s["truth"], s["lo95"],
                s["q25"], s["median"], s["q75"], s["hi95"], s["mean_bias"], s["bias_se"], c["n"])))
    _atomic_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# score study


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(np.mean(x)), se


@dataclass
class ScoreTable:
    """Mean drop-one scores of the symmetric (S) and asymmetric (A) fits.

    ``rows`` holds one entry per (cell, variant) with Monte Carlo standard
    errors; ``paired`` holds the per-cell S minus A differences, whose
    standard errors account for both fits sharing each replicate.
    """

    rows: list
    paired: list
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"study": "score", "config": self.config, "rows": self.rows, "paired": self.paired}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def gap(self, model: str, separability: str, rho12: float, eta: float) -> dict:
        for p in self.paired:
            if (p["model"], p["separability"], p["rho12"], p["eta"]) == (model, separability, rho12, eta):
                return p
        raise KeyError((model, separability, rho12, eta))

    def to_csv(self) -> str:
        cols = ["model", "separability", "rho12", "eta", "variant", "mspe", "mspe_se",
                "lscore", "lscore_se", "n"]
        lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in self.rows]
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        out = [f"{'cell':<32} {'MSPE S':>15} {'MSPE A':>15} {'LSCORE S':>15} {'LSCORE A':>15}"]
        by_key = {}
        for r in self.rows:
            by_key.setdefault((r["model"], r["separability"], r["rho12"], r["eta"]), {})[r["variant"]] = r
        for (m, s, rho, eta), v in by_key.items():
            cells = [f"{v[x][k]:.3f}±{v[x][k + '_se']:.3f}" for k in ("mspe", "lscore") for x in ("S", "A")]
            out.append(f"{m} {s} rho={rho:g} eta={eta:g}".ljust(32) + " "
                       + " ".join(f"{c:>15}" for c in (cells[0], cells[1], cells[2], cells[3])))
        return "\n".join(out)


def run_score_study(cfg: ExperimentConfig, threads: int = 1) -> ScoreTable:
    """Cross-validation scores of symmetric and asymmetric fits to asymmetric data."""
    results = run_replicates(cfg, "score", threads)
    rows, paired = [], []
    for cell, docs in results.items():
        ok = [d["result"] for d in docs if d["ok"]]
        failed = len(docs) - len(ok)
        if not ok:
            raise EstimationError(f"every replicate of {cell.key} failed")
        valid = failed <= MAX_FAILURE_RATE * len(docs)
        for label in ("S", "A"):
            mspe, mspe_se = _mean_se([r[label]["mspe"] for r in ok])
            ls, ls_se = _mean_se([r[label]["lscore"] for r in ok])
            rows.append({**cell.to_dict(), "variant": label, "mspe": mspe, "mspe_se": mspe_se,
                         "lscore": ls, "lscore_se": ls_se, "n": len(ok), "failed": failed,
                         "valid": valid})
        gm, gm_se = _mean_se([r["S"]["mspe"] - r["A"]["mspe"] for r in ok])
        gl, gl_se = _mean_se([r["S"]["lscore"] - r["A"]["lscore"] for r in ok])
        paired.append({**cell.to_dict(), "mspe_gap": gm, "mspe_gap_se": gm_se,
                       "lscore_gap": gl, "lscore_gap_se": gl_se, "n": len(ok), "valid": valid})
    table = ScoreTable(_floats(rows), _floats(paired), cfg.study_dict())
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        _atomic_text(out / "score_table.json", table.to_json())
        _atomic_text(out / "score_table.csv", table.to_csv())
    return table


# --------------------------------------------------------------------------
# data pipeline

PIPELINE_MODELS = (
    (1, Variant(False, True)),
    (2, Variant(False, False)),
    (3, Variant(True, True)),
    (4, Variant(True, False)),
)


@dataclass(frozen=True)
class PipelineConfig:
    family: str = "M1"
    cutoff: float = 1.0
    starts: int = 1
    budget: int = 5000
    seed: int = 0
    scan: bool = True
    out_dir: Optional[str] = None


def compare_models(data: ObservationSet, cfg: PipelineConfig = PipelineConfig()) -> dict:
    """Fit the four sym/asym x sep/nonsep variants and score them.

    Larger models get the nested models' optima among their starts, so the
    Log-CL never decreases from Model 1 to Model 4.
    """
    cl = CompositeLikelihood(data, cfg.cutoff)
    f1, f3 = fit_symmetric_asymmetric(cfg.family, True, data, cl, cfg.starts, cfg.budget,
                                      cfg.seed, cfg.scan, nested_start=True)
    v2, v4 = PIPELINE_MODELS[1][1], PIPELINE_MODELS[3][1]
    nested = [embed_parameters(f1.estimate, v2)] if cfg.budget > 0 else []
    f2 = fit(cfg.family, v2, data, objective=cl, starts=cfg.starts, budget=cfg.budget,
             seed=cfg.seed, extra_starts=nested)
    extra = []
    if cfg.budget > 0:
        extra = [embed_parameters(f2.estimate, v4), embed_parameters(f3.estimate, v4)]
        if cfg.scan:
            extra += asymmetry_scan(cfg.family, v4, cl, f2.estimate)
    f4 = fit(cfg.family, v4, data, objective=cl, starts=cfg.starts, budget=cfg.budget,
             seed=cfg.seed, extra_starts=extra)
    rows = []
    for (number, variant), res in zip(PIPELINE_MODELS, (f1, f2, f3, f4)):
        cv = drop_one_cv(res.model(), data)
        rows.append({"model": number, "variant": variant.label, "family": cfg.family,
                     "estimate": res.estimate.as_dict(), "log_cl": res.objective,
                     "n_parameters": len(res.estimate.values), "converged": res.converged,
                     "mspe": cv.mspe, "lscore": cv.lscore, "per_variable": cv.to_dict()["per_variable"],
                     "notes": list(res.identifiability_notes)})
    best = max(rows, key=lambda r: r["log_cl"])["model"]
    return _floats({"n_observations": len(data), "n_pairs": cl.n_pairs, "cutoff": cfg.cutoff,
                    "rows": rows, "best_log_cl": best,
                    "best_mspe": min(rows, key=lambda r: r["mspe"])["model"]})


def run_data_pipeline(data_csv, cfg: PipelineConfig = PipelineConfig()) -> dict:
    """Ingest residuals from CSV and compare Models 1-4."""
    data = read_csv(data_csv, min_rows=MIN_PIPELINE_ROWS)
    if not {1, 2} <= set(np.unique(data.vars).tolist()):
        raise IngestionError(f"{data_csv}: need observations of variables 1 and 2")
    report = {"source": str(data_csv), **compare_models(data, cfg)}
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        write_json(out / "pipeline_report.json", report)
        lines = ["model,variant,log_cl,mspe,lscore,n_parameters"]
        lines += [f"{r['model']},{r['variant']},{r['log_cl']},{r['mspe']},{r['lscore']},{r['n_parameters']}"
                  for r in report["rows"]]
        _atomic_text(out / "pipeline_report.csv", "\n".join(lines) + "\n")
    return report


# --------------------------------------------------------------------------
# helpers


def _floats(obj):
    """Convert numpy scalars to plain Python numbers, recursively."""
    if isinstance(obj, dict):
        return {k: _floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_floats(v) for v in obj]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
