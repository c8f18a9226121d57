import json

import numpy as np
import pytest

from asymsphere.cli import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from asymsphere.covariance import preset, spec_to_dict
from asymsphere.data import read_csv


@pytest.fixture
def field_csv(tmp_path):
    assert main(["simulate", "--eta", "0.6", "--n-per-axis", "6", "--seed", "3",
                 "--out-dir", str(tmp_path), "--output", "f.csv"]) == EXIT_OK
    return tmp_path / "f.csv"


def test_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--model", "M9"])
    assert exc.value.code == EXIT_USAGE


def test_threads_must_be_positive():
    with pytest.raises(SystemExit) as exc:
        main(["--threads", "0", "simulate"])
    assert exc.value.code == EXIT_USAGE


class TestSimulate:
    def test_writes_csv_and_sidecar(self, field_csv):
        obs = read_csv(field_csv)
        assert len(obs) == 72
        side = json.loads(field_csv.with_suffix(".json").read_text())
        assert side["seed"] == 3 and side["asymmetry"]["eta"] == 0.6
        assert side["grid"] == {"n_per_axis": 6, "pole_safe": True}

    def test_seed_reproducible(self, tmp_path, field_csv):
        main(["simulate", "--eta", "0.6", "--n-per-axis", "6", "--seed", "3", "--out-dir", str(tmp_path),
              "--output", "g.csv"])
        assert (tmp_path / "g.csv").read_bytes() == field_csv.read_bytes()

    def test_global_seed_position(self, tmp_path, field_csv):
        main(["--seed", "3", "simulate", "--eta", "0.6", "--n-per-axis", "6", "--out-dir", str(tmp_path),
              "--output", "h.csv"])
        assert (tmp_path / "h.csv").read_bytes() == field_csv.read_bytes()

    def test_invalid_parameters(self, tmp_path, capsys):
        code = main(["simulate", "--rho12", "0.99", "--c", "0.05", "0.5", "--out-dir", str(tmp_path)])
        assert code == EXIT_VALIDATION
        assert "rho" in capsys.readouterr().err


class TestCheckPsd:
    def test_preset_passes(self, capsys):
        assert main(["check-psd", "--model", "M1", "--K", "10"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["psd"] and doc["K"] == 10

    def test_invalid_spec_fails(self, tmp_path, capsys):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec_to_dict(preset("M1", rho12=0.99, c=(0.05, 0.5)))))
        assert main(["check-psd", "--spec", str(path), "--out-dir", str(tmp_path)]) == EXIT_VALIDATION
        doc = json.loads((tmp_path / "check_psd.json").read_text())
        assert not doc["psd"] and doc["failures"] and not doc["validity_conditions"]

    def test_missing_spec_file(self, tmp_path):
        assert main(["check-psd", "--spec", str(tmp_path / "nope.json")]) == EXIT_VALIDATION


class TestFitCv:
    def test_fit_then_cv(self, field_csv, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["fit", str(field_csv), "--variant", "sym-sep", "--starts", "1", "--budget", "300",
                     "--out-dir", str(out)]) == EXIT_OK
        fit_doc = json.loads((out / "fit.json").read_text())
        assert fit_doc["variant"] == "sym-sep" and np.isfinite(fit_doc["objective"])
        capsys.readouterr()
        assert main(["cv", str(field_csv), "--fit-json", str(out / "fit.json"), "--out-dir", str(out)]) == EXIT_OK
        cv = json.loads(capsys.readouterr().out)
        assert cv["n"] == 72 and cv["mspe"] > 0
        rows = (out / "cv_points.csv").read_text().splitlines()
        assert rows[0] == "index,var,observed,predicted,variance,error" and len(rows) == 73

    def test_cutoff_km(self, field_csv, capsys):
        pairs = []
        for flag in (["--cutoff-km", "3000"], ["--cutoff-rad", "1.0"]):
            assert main(["fit", str(field_csv), "--variant", "sym-sep", "--budget", "0", *flag]) == EXIT_OK
            pairs.append(json.loads(capsys.readouterr().out)["n_pairs"])
        assert 0 < pairs[0] < pairs[1]

    def test_bad_variant(self, field_csv):
        with pytest.raises(SystemExit) as exc:
            main(["fit", str(field_csv), "--variant", "skew"])
        assert exc.value.code == EXIT_USAGE

    def test_missing_data(self, tmp_path):
        assert main(["fit", str(tmp_path / "none.csv")]) == EXIT_VALIDATION

    def test_nan_data(self, tmp_path, capsys):
        path = tmp_path / "nan.csv"
        path.write_text("lon_deg,lat_deg,var,value\n0,0,1,0.1\n1,0,1,nan\n")
        assert main(["fit", str(path)]) == EXIT_VALIDATION
        assert "row 3" in capsys.readouterr().err


class TestStudies:
    def config(self, tmp_path, **kw):
        doc = {"grid": {"n_per_axis": 5}, "replicates": 2, "budget": 100, "scan": False, **kw}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return path

    def test_score_study_byte_identical(self, tmp_path):
        cfg = self.config(tmp_path, scenarios=[{"rho12": 0.5, "eta": 0.6}])
        assert main(["score-study", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main(["score-study", "--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == EXIT_OK
        a = (tmp_path / "a" / "score_table.json").read_bytes()
        assert a == (tmp_path / "b" / "score_table.json").read_bytes()

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = self.config(tmp_path, seed=1)
        main(["bias-study", "--config", str(cfg), "--seed", "5", "--out-dir", str(tmp_path / "o")])
        doc = json.loads((tmp_path / "o" / "bias_study.json").read_text())
        assert doc["config"]["seed"] == 5

    def test_invalid_config(self, tmp_path, capsys):
        cfg = self.config(tmp_path, replicates=0)
        assert main(["bias-study", "--config", str(cfg)]) == EXIT_VALIDATION
        assert "at least 1" in capsys.readouterr().err

    def test_schema_violation(self, tmp_path, capsys):
        cfg = self.config(tmp_path, models=["M7"])
        assert main(["score-study", "--config", str(cfg)]) == EXIT_VALIDATION
        assert "config invalid" in capsys.readouterr().err


def test_pipeline(field_csv, tmp_path, capsys):
    assert main(["pipeline", str(field_csv), "--budget", "200", "--out-dir", str(tmp_path / "p")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert [r["model"] for r in report["rows"]] == [1, 2, 3, 4]
    assert (tmp_path / "p" / "pipeline_report.csv").exists()
