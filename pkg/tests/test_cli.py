import filecmp
import subprocess
import sys

import pandas as pd
import pytest

from solarmos import fileio
from solarmos.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

CONFIG = """\
schema_version: 1
seed: 7
experiment:
  seasons: [Summer]
  lead_times: [12]
  min_cases: 20
engines:
  QRF: {n_trees: 20}
  GRF: {n_trees: 20}
  GBDT: {n_trees: 20}
  MCQRNN: {iterations: 2, steps_per_iteration: 30, steps: 2, screen_steps_per_iteration: 15}
synth:
  n_stations: 2
  n_days: 60
  start: "2016-06-01"
"""

OUTPUTS = ("forecasts.csv", "metrics.csv", "reliability.csv", "pev.csv", "importance.csv")
TABLES = ("skill_vs_lead.csv", "bss_vs_threshold.csv", "overall_scores.csv", "reliability.csv",
          "pev_vs_cost_loss.csv", "importance.csv")


def pipeline(root, cfg, jobs=1):
    data, run, tables = root / "data", root / "run", root / "tables"
    assert main(["synth", "--config", str(cfg), "--out", str(data)]) == EXIT_OK
    assert main(["fit", "--config", str(cfg), "--data", str(data), "--out", str(run), "--jobs", str(jobs)]) == EXIT_OK
    assert main(["predict", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == EXIT_OK
    assert main(["verify", "--config", str(cfg), "--out", str(run)]) == EXIT_OK
    assert main(["report", "--data", str(run), "--out", str(tables)]) == EXIT_OK
    return data, run, tables


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.yaml"
    path.write_text(CONFIG)
    return path


@pytest.fixture(scope="module")
def run_a(tmp_path_factory, cfg_file):
    return pipeline(tmp_path_factory.mktemp("a"), cfg_file)


# ---------------------------------------------------------------- happy path

def test_synth_row_counts(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("synth:\n  n_stations: 1\n  n_days: 30\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_OK
    assert "observations.csv: 720 rows" in capsys.readouterr().out
    assert len(pd.read_csv(tmp_path / "d" / "observations.csv")) == 720


def test_pipeline_writes_every_table(run_a):
    _, run, tables = run_a
    for name in OUTPUTS:
        assert (run / name).is_file()
    for name in TABLES:
        assert (tables / name).is_file()
    assert len(list((run / "models").glob("*.json.gz"))) == 7 * 3
    fc = fileio.read_forecasts(run / "forecasts.csv")
    assert set(fc["engine"]) == {"GA", "NOTR", "QR", "MCQRNN", "QRF", "GRF", "GBDT"}
    errors = pd.read_csv(run / "fit_errors.csv")
    assert errors.empty


def test_importance_table_has_g_on_top(run_a):
    imp = pd.read_csv(run_a[2] / "importance.csv")
    assert (imp[imp["rank"] == 1]["all"] == "G").all()


def test_rerun_is_byte_identical(tmp_path, cfg_file, run_a):
    _, run_b, tables_b = pipeline(tmp_path, cfg_file, jobs=2)
    _, run, tables = run_a
    for name in OUTPUTS:
        assert filecmp.cmp(run / name, run_b / name, shallow=False), name
    for name in TABLES:
        assert filecmp.cmp(tables / name, tables_b / name, shallow=False), name
    models = sorted(p.name for p in (run / "models").iterdir())
    assert models == sorted(p.name for p in (run_b / "models").iterdir())
    for m in models:
        assert filecmp.cmp(run / "models" / m, run_b / "models" / m, shallow=False), m


def test_refit_of_one_engine_keeps_the_others(tmp_path, cfg_file, run_a):
    data = run_a[0]
    run = tmp_path / "run"
    assert main(["fit", "--config", str(cfg_file), "--data", str(data), "--out", str(run), "--engines", "GA,QR"]) == 0
    assert main(["fit", "--config", str(cfg_file), "--data", str(data), "--out", str(run), "--engines", "GA"]) == 0
    names = {p.name.split("_")[0] for p in (run / "models").iterdir()}
    assert names == {"GA", "QR"}
    assert main(["predict", "--config", str(cfg_file), "--data", str(data), "--out", str(run)]) == 0
    assert set(pd.read_csv(run / "forecasts.csv")["engine"]) == {"GA", "QR"}


# ---------------------------------------------------------------- refusals

def test_predict_refuses_other_seed(run_a, cfg_file, capsys):
    data, run, _ = run_a
    code = main(["predict", "--config", str(cfg_file), "--data", str(data), "--out", str(run), "--seed", "8"])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert "seed mismatch" in err and "7" in err and "8" in err


def test_predict_refuses_other_data(tmp_path, run_a, cfg_file, capsys):
    data, run, _ = run_a
    other = tmp_path / "other"
    assert main(["synth", "--config", str(cfg_file), "--out", str(other), "--seed", "99"]) == 0
    code = main(["predict", "--config", str(cfg_file), "--data", str(other), "--out", str(run)])
    assert code == EXIT_DATA
    assert "data_hash mismatch" in capsys.readouterr().err


def test_predict_without_models(tmp_path, run_a, cfg_file):
    assert main(["predict", "--config", str(cfg_file), "--data", str(run_a[0]), "--out", str(tmp_path)]) == EXIT_DATA


# ---------------------------------------------------------------- exit codes

def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["fit", "--out", str(tmp_path)]) == EXIT_USAGE  # --data missing
    assert main(["fit", "--data", str(tmp_path), "--out", str(tmp_path), "--jobs", "0"]) == EXIT_USAGE
    assert main(["fit", "--data", str(tmp_path), "--out", str(tmp_path), "--engines", "GA,XGB"]) == EXIT_USAGE
    assert "valid engines" in capsys.readouterr().err
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "missing.yaml")]) == EXIT_USAGE


def test_bad_config_key_names_line(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("seed: 1\nexperiment:\n  lead_time: [1]\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "experiment.lead_time" in err and "line 3" in err


def test_missing_data_directory(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == EXIT_DATA


def test_schema_violation_reports_row(tmp_path, run_a, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for name in fileio.SCHEMAS:
        (data / name).write_bytes((run_a[0] / name).read_bytes())
    obs = (data / "observations.csv").read_text().splitlines()
    parts = obs[4].split(",")
    parts[-1] = "bright"
    obs[4] = ",".join(parts)
    (data / "observations.csv").write_text("\n".join(obs) + "\n")
    assert main(["fit", "--data", str(data), "--out", str(tmp_path / "r")]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "observations.csv line 5 column 'ghi_wm2'" in err


def test_schema_checks(tmp_path):
    schema = fileio.SCHEMAS["model_fields.csv"]
    raw = pd.DataFrame({"station_id": ["A"], "valid_time": ["2016-06-01T12:00Z"], "lead_time": ["-1"]})
    for c in schema.numbers:
        raw[c] = "0.5"
    with pytest.raises(fileio.SchemaError) as err:
        fileio.parse_table(raw, schema)
    assert err.value.row == 2 and err.value.column == "lead_time"
    raw["lead_time"] = "12"
    raw["valid_time"] = "yesterday"
    with pytest.raises(fileio.SchemaError):
        fileio.parse_table(raw, schema)
    raw["valid_time"] = "2016-06-01T12:00Z"
    raw["G"] = "inf"
    with pytest.raises(fileio.SchemaError):
        fileio.parse_table(raw, schema)
    raw["G"] = ""
    assert fileio.parse_table(raw, schema)["G"].isna().all()
    with pytest.raises(fileio.SchemaError):
        fileio.parse_table(raw.drop(columns=["RAIN"]), schema)


# ---------------------------------------------------------------- verify and report edge cases

def test_verify_with_no_rows(tmp_path, run_a, capsys):
    header = pd.read_csv(run_a[1] / "forecasts.csv", nrows=0)
    header.to_csv(tmp_path / "forecasts.csv", index=False)
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    assert "warning: no forecast rows" in capsys.readouterr().err
    assert pd.read_csv(tmp_path / "metrics.csv").empty
    assert main(["report", "--data", str(tmp_path), "--out", str(tmp_path / "t")]) == EXIT_OK


def test_verify_engine_subset(tmp_path, run_a):
    run = run_a[1]
    assert main(["verify", "--data", str(run), "--out", str(tmp_path), "--engines", "QRF"]) == EXIT_OK
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert set(metrics["engine"]) == {"QRF", "RAW"}


def test_report_requires_verification_tables(tmp_path):
    assert main(["report", "--data", str(tmp_path), "--out", str(tmp_path / "t")]) == EXIT_DATA


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "solarmos.cli", "fit", "--engines", "NOPE",
                           "--data", str(tmp_path), "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "unknown engine" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "solarmos.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
