import json
import math

import numpy as np
import pytest

from asymsphere.asymmetry import AsymmetricCovariance, AsymmetrySpec
from asymsphere.covariance import preset
from asymsphere.data import IngestionError, write_csv
from asymsphere.experiments import (CONFIG_SCHEMA, Cell, ConfigError, ExperimentConfig, PipelineConfig,
                                    compare_models, fit_seed, replicate_data, run_bias_study,
                                    run_data_pipeline, run_replicates, run_score_study)
from asymsphere.geometry import paper_grid
from asymsphere.simulate import simulate_field

TINY = dict(n_per_axis=5, replicates=2, budget=150, scan=False)


class TestConfig:
    def test_defaults_match_study_setting(self):
        cfg = ExperimentConfig()
        assert cfg.sigma2 == (1.0, 1.0) and cfg.c == (0.1, 0.2)
        assert cfg.scenarios == ((0.5, 0.1),) and cfg.alpha == (math.pi / 2, math.pi / 2)
        assert cfg.n_per_axis == 15 and cfg.cutoff == 1.0

    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig(models=("M1", "M3"), scenarios=((0.25, 0.1), (0.5, 0.6)), seed=4)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.load(path) == cfg

    @pytest.mark.parametrize("doc, match", [
        ({"models": ["M4"]}, "models/0"),
        ({"replicates": -1}, "replicates"),
        ({"scenarios": [{"rho12": 0.5, "eta": 4.0}]}, "scenarios/0/eta"),
        ({"grid": {"n_per_axis": 1}}, "grid/n_per_axis"),
        ({"colour": "red"}, "Additional properties"),
        ({"cutoff": 0}, "cutoff"),
    ])
    def test_schema_errors(self, doc, match):
        with pytest.raises(ConfigError, match=match):
            ExperimentConfig.from_dict(doc)

    def test_invalid_truth(self):
        with pytest.raises(ConfigError, match="invalid"):
            ExperimentConfig(c=(0.1, 0.5), scenarios=((0.9, 0.1),))

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            ExperimentConfig.load(path)

    def test_schema_is_closed(self):
        assert CONFIG_SCHEMA["additionalProperties"] is False

    def test_fingerprint_ignores_replicates_and_out_dir(self):
        a = ExperimentConfig(replicates=5)
        assert a.fingerprint() == ExperimentConfig(replicates=50, out_dir="/x").fingerprint()
        assert a.fingerprint() != ExperimentConfig(seed=1).fingerprint()

    def test_cells(self):
        cfg = ExperimentConfig(models=("M1", "M2"), separability=("sep", "nonsep"),
                               scenarios=((0.25, 0.1), (0.5, 0.6)))
        assert len(cfg.cells()) == 8
        assert Cell("M1", "sep", 0.25, 0.1).key == "M1-sep-rho0.25-eta0.1"

    def test_truth(self):
        cfg = ExperimentConfig()
        pv = cfg.truth(cfg.cells()[0])
        assert pv.as_dict() == {"sigma2_1": 1.0, "sigma2_2": 1.0, "rho12": 0.5, "c11": 0.1, "c22": 0.2,
                                "eta": 0.1, "alpha1": math.pi / 2, "alpha2": math.pi / 2}


class TestReplicates:
    def test_common_random_numbers_and_layout(self):
        cfg = ExperimentConfig(**TINY)
        cell = cfg.cells()[0]
        a, b = replicate_data(cfg, cell, 0), replicate_data(cfg, cell, 0)
        np.testing.assert_array_equal(a.values, b.values)
        assert len(a) == 2 * len(paper_grid(5))
        assert not np.array_equal(a.values, replicate_data(cfg, cell, 1).values)

    def test_fit_seed_depends_on_replicate(self):
        cfg = ExperimentConfig(**TINY)
        assert fit_seed(cfg, 0) != fit_seed(cfg, 1) and fit_seed(cfg, 0) == fit_seed(cfg, 0)

    def test_zero_replicates(self):
        with pytest.raises(ConfigError, match="at least 1"):
            run_replicates(ExperimentConfig(replicates=0), "bias")

    def test_resume_reuses_files(self, tmp_path, monkeypatch):
        cfg = ExperimentConfig(**{**TINY, "out_dir": str(tmp_path)})
        first = run_bias_study(cfg)
        files = sorted((tmp_path / "replicates" / "bias").rglob("r*.json"))
        assert len(files) == 2

        from asymsphere import experiments

        def boom(*a, **k):
            raise AssertionError("replicate recomputed")

        monkeypatch.setitem(experiments._WORKERS, "bias", boom)
        assert run_bias_study(cfg) == first

    def test_stale_files_recomputed(self, tmp_path):
        cfg = ExperimentConfig(**{**TINY, "out_dir": str(tmp_path), "replicates": 1})
        run_bias_study(cfg)
        other = ExperimentConfig(**{**TINY, "out_dir": str(tmp_path), "replicates": 1, "seed": 9})
        doc = run_replicates(other, "bias")[other.cells()[0]][0]
        assert doc["fingerprint"] == other.fingerprint()

    def test_failures_recorded(self, monkeypatch):
        from asymsphere import experiments
        from asymsphere.estimate import EstimationError

        def fail(cfg, cell, rep):
            raise EstimationError("synthetic")

        monkeypatch.setitem(experiments._WORKERS, "bias", fail)
        summary = run_bias_study(ExperimentConfig(**TINY))
        cell = summary["cells"][0]
        assert cell["failed"] == 2 and not cell["valid"]
        assert cell["errors"] == ["EstimationError: synthetic"]

    def test_process_pool_matches_serial(self):
        cfg = ExperimentConfig(**TINY)
        assert run_bias_study(cfg, threads=2) == run_bias_study(cfg, threads=1)


class TestBiasStudy:
    def test_truth_init_with_zero_budget_has_zero_bias(self):
        cfg = ExperimentConfig(**{**TINY, "budget": 0, "init": "truth", "replicates": 3})
        params = run_bias_study(cfg)["cells"][0]["parameters"]
        for name, s in params.items():
            assert s["mean_bias"] == 0.0 and s["median_bias"] == 0.0, name

    def test_outputs(self, tmp_path):
        cfg = ExperimentConfig(**{**TINY, "out_dir": str(tmp_path)})
        summary = run_bias_study(cfg)
        assert json.loads((tmp_path / "bias_study.json").read_text()) == summary
        lines = (tmp_path / "bias_study.csv").read_text().splitlines()
        assert lines[0].startswith("model,separability") and len(lines) == 1 + 8
        s = summary["cells"][0]["parameters"]["eta"]
        assert s["lo95"] <= s["q25"] <= s["median"] <= s["q75"] <= s["hi95"]
        assert "bias_se" in s
        assert "out_dir" not in summary["config"]


class TestScoreStudy:
    @staticmethod
    @pytest.fixture(scope="class")
    def table():
        return run_score_study(ExperimentConfig(**{**TINY, "scenarios": ((0.5, 0.6),), "replicates": 3}))

    def test_rows_carry_standard_errors(self, table):
        assert [r["variant"] for r in table.rows] == ["S", "A"]
        for r in table.rows:
            assert r["n"] == 3 and r["mspe_se"] >= 0 and r["lscore_se"] >= 0

    def test_gap_is_paired_difference(self, table):
        g = table.gap("M1", "nonsep", 0.5, 0.6)
        s, a = table.rows
        assert g["mspe_gap"] == pytest.approx(s["mspe"] - a["mspe"])
        with pytest.raises(KeyError):
            table.gap("M2", "nonsep", 0.5, 0.6)

    def test_render_and_csv(self, table):
        assert "M1 nonsep rho=0.5 eta=0.6" in table.render()
        assert table.to_csv().count("\n") == 3

    def test_json_is_deterministic(self, table):
        again = run_score_study(ExperimentConfig(**{**TINY, "scenarios": ((0.5, 0.6),), "replicates": 3}))
        assert again.to_json() == table.to_json()

    def test_no_asymmetry_no_advantage(self):
        cfg = ExperimentConfig(n_per_axis=7, replicates=6, budget=1500, scenarios=((0.5, 0.0),))
        g = run_score_study(cfg).gap("M1", "nonsep", 0.5, 0.0)
        assert abs(g["mspe_gap"]) <= 3 * g["mspe_gap_se"] + 0.01


class TestPipeline:
    @staticmethod
    @pytest.fixture(scope="class")
    def data():
        model = AsymmetricCovariance(preset("M1"), AsymmetrySpec(0.6))
        return simulate_field(model, paper_grid(7), seed=12)

    def test_models_nested_log_cl(self, data):
        report = compare_models(data, PipelineConfig(budget=1500))
        rows = report["rows"]
        assert [r["model"] for r in rows] == [1, 2, 3, 4]
        assert [r["n_parameters"] for r in rows] == [4, 5, 7, 8]
        assert rows[1]["log_cl"] >= rows[0]["log_cl"]
        assert rows[3]["log_cl"] >= max(rows[1]["log_cl"], rows[2]["log_cl"])
        assert report["best_log_cl"] == 4

    def test_csv_pipeline(self, data, tmp_path):
        path = write_csv(data, tmp_path / "res.csv")
        report = run_data_pipeline(path, PipelineConfig(budget=100, scan=False, out_dir=str(tmp_path)))
        assert report["source"] == str(path)
        assert (tmp_path / "pipeline_report.csv").read_text().count("\n") == 5
        assert json.loads((tmp_path / "pipeline_report.json").read_text()) == report

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "few.csv"
        path.write_text("lon_deg,lat_deg,var,value\n" + "".join(f"{i},0,1,0.1\n" for i in range(5)))
        with pytest.raises(IngestionError, match="at least 10"):
            run_data_pipeline(path)

    def test_single_variable(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("lon_deg,lat_deg,var,value\n" + "".join(f"{i},0,1,0.1\n" for i in range(12)))
        with pytest.raises(IngestionError, match="variables 1 and 2"):
            run_data_pipeline(path)
