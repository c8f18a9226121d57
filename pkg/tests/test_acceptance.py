"""Acceptance criteria.

Each test prints one ``criterion N: PASS|FAIL`` line (also collected into the
terminal summary). The Monte Carlo studies take most of an hour on one core;
set ``ASYMSPHERE_ACCEPTANCE_DIR`` to keep their per-replicate files between
runs (stale files are detected by config fingerprint and recomputed).
"""
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from asymsphere.asymmetry import AsymmetricCovariance, AsymmetrySpec, build_block_cov, cross_cov
from asymsphere.cli import main
from asymsphere.covariance import preset, radial_eval, validate_params
from asymsphere.experiments import (ExperimentConfig, PipelineConfig, compare_models, replicate_data,
                                    run_bias_study, run_score_study)
from asymsphere.gegenbauer import check_psd_sequence, extract_schoenberg
from asymsphere.geometry import paper_grid
from asymsphere.simulate import simulate_replicates

pytestmark = [pytest.mark.acceptance]

RESULTS = []
THREADS = os.cpu_count() or 1
PUBLISHED_GAPS = {"M1": 0.950 - 0.882, "M2": 0.924 - 0.856, "M3": 0.970 - 0.897}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="session")
def study_dir(tmp_path_factory):
    env = os.environ.get("ASYMSPHERE_ACCEPTANCE_DIR")
    return Path(env) if env else tmp_path_factory.mktemp("acceptance")


def random_valid_model(rng, name=None):
    name = name or str(rng.choice(["M1", "M2", "M3"]))
    sigma2 = rng.uniform(0.2, 3.0, 2)
    c = rng.uniform(0.05, 1.5, 2)
    separable = bool(rng.random() < 0.3)
    rho = rng.uniform(-1.0, 1.0)
    spec = preset(name, sigma2=sigma2, rho12=rho, c=c, separable=separable)
    while not validate_params(spec):
        rho *= 0.9
        spec = preset(name, sigma2=sigma2, rho12=rho, c=c, separable=separable)
    return spec


def random_axis(rng):
    return rng.uniform(0, 2 * math.pi), math.acos(rng.uniform(-1, 1))


def unit(rng, n, dim=2):
    x = rng.standard_normal((n, dim + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_criterion_1_psd_oracle():
    t0 = time.perf_counter()
    mins = {}
    for name in ("M1", "M2", "M3"):
        rep = check_psd_sequence(extract_schoenberg(preset(name), d=2, K=30), tol=1e-6)
        mins[name] = (rep.ok, float(np.min(rep.min_eigenvalues)))
    invalid = preset("M1", rho12=0.99, c=(0.05, 0.5))
    bad = check_psd_sequence(extract_schoenberg(invalid, d=2, K=30), tol=1e-6)
    elapsed = time.perf_counter() - t0
    ok = all(v[0] for v in mins.values()) and not bad.ok and elapsed < 60
    detail = ", ".join(f"{k} min eig {v[1]:.2e}" for k, v in mins.items())
    report(1, ok, f"{detail}; invalid spec min eig {np.min(bad.min_eigenvalues):.2e} "
                  f"({'rejected' if not bad.ok else 'accepted'}); {elapsed:.1f}s")


def test_criterion_2_block_covariance_psd():
    rng = np.random.default_rng(20240611)
    t0 = time.perf_counter()
    worst, failures = 0.0, []
    for case in range(200):
        spec = random_valid_model(rng)
        model = AsymmetricCovariance(spec, AsymmetrySpec(rng.uniform(0, math.pi), *random_axis(rng)))
        n = int(rng.integers(2, 61))
        cov = build_block_cov(model, unit(rng, n), rng.integers(1, 3, n))
        rel = float(np.linalg.eigvalsh(cov)[0]) / float(np.max(spec.sigma2))
        worst = min(worst, rel)
        if rel < -1e-8:
            failures.append(f"case {case} {spec.name} rho={spec.rho[0, 1]:.3f} "
                            f"c={np.round(spec.c_marginal, 3).tolist()} min eig/sigma2={rel:.3g}")
    elapsed = time.perf_counter() - t0
    report(2, not failures and elapsed < 120,
           f"{200 - len(failures)}/200 cases PSD, worst min eig/max sigma2 {worst:.3g}; {elapsed:.1f}s"
           + (f"; failing: {'; '.join(failures)}" if failures else ""))


def test_criterion_3_symmetric_reduction():
    rng = np.random.default_rng(3)
    specs = [random_valid_model(rng, name) for name in ("M1", "M2", "M3") for _ in range(10)]
    worst = 0.0
    for _ in range(10_000):
        spec = specs[rng.integers(len(specs))]
        i, j = (int(v) for v in rng.integers(1, 3, 2))
        x, y = unit(rng, 2)
        if rng.random() < 0.1:
            y = x.copy()
        asym = AsymmetricCovariance(spec, AsymmetrySpec(0.0, *random_axis(rng)))
        sym = AsymmetricCovariance(spec)
        worst = max(worst, abs(cross_cov(asym, i, j, x, y) - cross_cov(sym, i, j, x, y)))
    report(3, worst <= 1e-15, f"10^4 tuples, max |asym(eta=0) - sym| = {worst:.3g}")


def test_criterion_4_circle_closed_form():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        spec = random_valid_model(rng)
        eta = rng.uniform(-math.pi, math.pi)
        model = AsymmetricCovariance(spec, AsymmetrySpec(eta), dim=1)
        a, b = rng.uniform(-math.pi, math.pi, 2)
        x, y = np.array([math.cos(a), math.sin(a)]), np.array([math.cos(b), math.sin(b)])
        cos_t, wedge = float(x @ y), x[0] * y[1] - x[1] * y[0]
        # +sin(eta) belongs to entry (2, 1) under the printed rotation; (1, 2) carries -sin(eta)
        for (i, j), sign in (((2, 1), 1.0), ((1, 2), -1.0)):
            closed = math.acos(np.clip(cos_t * math.cos(eta) + sign * wedge * math.sin(eta), -1, 1))
            worst = max(worst, abs(cross_cov(model, i, j, x, y) - radial_eval(spec, i, j, closed)))
    report(4, worst <= 1e-12, f"10^3 tuples, max |generic - closed form| = {worst:.3g}")


def test_criterion_5_simulator_moments():
    model = AsymmetricCovariance(preset("M1"), AsymmetrySpec(0.6))
    sites = np.array([[1.0, 0.0, 0.0], [0.98, 0.2, 0.0], [0.8775825618903728, 0.0, 0.479425538604203],
                      [0.95, -0.1, 0.3], [0.9, 0.3, -0.3]])
    sites /= np.linalg.norm(sites, axis=1, keepdims=True)
    reps = simulate_replicates(model, sites, 2000, seed=0)
    z = np.stack([r.values for r in reps])
    cov = build_block_cov(model, reps[0].sites, reps[0].vars)
    prod = z[:, :, None] * z[:, None, :]
    emp = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(len(reps))
    zscore = np.abs(emp - cov) / se
    n_out = int(np.sum(zscore > 3))
    report(5, n_out == 0, f"{cov.size} entries, max |emp - model| / SE = {zscore.max():.2f}, {n_out} beyond 3 SE")


def test_criterion_6_eta_interval(study_dir):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(replicates=100, scenarios=((0.5, 0.1),), out_dir=str(study_dir / "bias"))
    cell = run_bias_study(cfg, threads=THREADS)["cells"][0]
    eta = cell["parameters"]["eta"]
    lo, hi = eta["lo95"], eta["hi95"]
    ok = 0.02 <= lo and hi <= 0.30 and lo <= 0.1 <= hi and cell["valid"]
    report(6, ok, f"eta middle-95% [{lo:.3f}, {hi:.3f}] (need within [0.02, 0.30] covering 0.1), "
                  f"median {eta['median']:.3f}, n={cell['n']}, failed={cell['failed']}; "
                  f"{time.perf_counter() - t0:.0f}s")


@pytest.fixture(scope="session")
def score_table(study_dir):
    cfg = ExperimentConfig(models=("M1", "M2", "M3"), scenarios=((0.5, 0.6), (0.25, 0.1)),
                           replicates=50, out_dir=str(study_dir / "score"))
    return run_score_study(cfg, threads=THREADS)


@pytest.mark.slow
def test_criterion_7_table_direction(score_table):
    parts, ok = [], True
    for model, published in PUBLISHED_GAPS.items():
        g = score_table.gap(model, "nonsep", 0.5, 0.6)
        margin = g["mspe_gap"] > 2 * g["mspe_gap_se"]
        lscore = g["lscore_gap"] > 0
        close = abs(g["mspe_gap"] - published) <= 0.05
        ok &= margin and lscore and close and g["valid"]
        parts.append(f"{model} gap {g['mspe_gap']:.4f}±{g['mspe_gap_se']:.4f} (published {published:.3f}), "
                     f"LSCORE gap {g['lscore_gap']:.4f}, n={g['n']}"
                     + ("" if margin else " [margin<2SE]") + ("" if lscore else " [LSCORE]")
                     + ("" if close else " [outside ±0.05]"))
    report(7, ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_8_effect_ordering(score_table):
    parts, ok = [], True
    for model in PUBLISHED_GAPS:
        strong = score_table.gap(model, "nonsep", 0.5, 0.6)["mspe_gap"]
        weak = score_table.gap(model, "nonsep", 0.25, 0.1)["mspe_gap"]
        ok &= strong > weak
        parts.append(f"{model} {strong:.4f} vs {weak:.4f}")
    report(8, ok, "MSPE improvement (rho=0.5, eta=0.6) vs (rho=0.25, eta=0.1): " + ", ".join(parts))


def _cached(path: Path, key: str, compute):
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("key") == key:
            return doc["value"]
    value = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"key": key, "value": value}))
    return value


@pytest.mark.slow
def test_criterion_9_model_ranking(study_dir):
    t0 = time.perf_counter()
    data_cfg = ExperimentConfig(scenarios=((0.5, 0.6),), replicates=50, seed=5)
    cell = data_cfg.cells()[0]
    pipe = PipelineConfig()
    key = hashlib.sha256(json.dumps([data_cfg.fingerprint(), repr(pipe)]).encode()).hexdigest()[:16]
    best_cl = beats = 0
    for rep in range(data_cfg.replicates):
        rep_report = _cached(study_dir / "pipeline" / f"r{rep:03d}.json", key,
                             lambda: compare_models(replicate_data(data_cfg, cell, rep), pipe))
        mspe = {r["model"]: r["mspe"] for r in rep_report["rows"]}
        best_cl += rep_report["best_log_cl"] == 4
        beats += mspe[3] < mspe[1] and mspe[4] < mspe[2]
    n = data_cfg.replicates
    report(9, best_cl >= 0.8 * n and beats >= 0.8 * n,
           f"Model 4 best Log-CL in {best_cl}/{n}; asymmetric beat symmetric MSPE in {beats}/{n}; "
           f"{time.perf_counter() - t0:.0f}s")


def test_criterion_10_determinism(tmp_path):
    doc = {"models": ["M1", "M2"], "scenarios": [{"rho12": 0.5, "eta": 0.6}], "replicates": 3,
           "grid": {"n_per_axis": 7}, "seed": 11}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    outputs = []
    for run in ("a", "b"):
        assert main(["score-study", "--config", str(cfg), "--out-dir", str(tmp_path / run)]) == 0
        outputs.append((tmp_path / run / "score_table.json").read_bytes())
    digest = hashlib.sha256(outputs[0]).hexdigest()[:12]
    report(10, outputs[0] == outputs[1], f"two score-study runs, sha256 {digest} vs "
                                         f"{hashlib.sha256(outputs[1]).hexdigest()[:12]}")
