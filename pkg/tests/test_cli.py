import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from adrgraph.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main, summarize_sweep
from adrgraph.config import dump_config
from adrgraph.datasets import load_dataset
from adrgraph.linalg import load_matrix, save_matrix
from conftest import tiny_config


@pytest.fixture
def tiny_json(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(dump_config(tiny_config()))
    return p


@pytest.fixture
def run_dir(tmp_path, tiny_json):
    out = tmp_path / "run"
    assert main(["run", "--config", str(tiny_json), "--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_outputs(run_dir, capsys):
    for name in ("config.json", "metrics.json", "performance_matrix.csv", "run_record.json"):
        assert (run_dir / name).is_file()
    m = json.loads((run_dir / "metrics.json").read_text())
    assert set(m) >= {"A_avg", "A_f", "A_l", "per_task_A_t", "rho_t"}
    assert len(m["per_task_A_t"]) == 3


def test_override_is_recorded(tmp_path, tiny_json):
    out = tmp_path / "o"
    rc = main(["run", "--config", str(tiny_json), "--out", str(out), "--override", "gamma=0.5",
               "--override", "method=bare", "--no-checkpoints"])
    assert rc == EXIT_OK
    rec = json.loads((out / "run_record.json").read_text())
    assert rec["config"]["gamma"] == 0.5 and rec["method"] == "bare"
    assert not (out / "checkpoints").exists()


def test_missing_config_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["run", "--config", str(missing)]) == EXIT_USAGE
    assert "nope.json" in capsys.readouterr().err


def test_bad_override_and_usage_exit_2(tiny_json):
    assert main(["run", "--config", str(tiny_json), "--override", "gamma=-1"]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_validate_bank_passes_fresh_checkpoint(run_dir, capsys):
    assert main(["validate-bank", str(run_dir / "checkpoints")]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out and all(line.startswith("PASS") for line in out)
    assert any("encoder_bank/R_0.bin" in line for line in out)


def test_validate_bank_names_corrupted_matrix(run_dir, capsys):
    path = run_dir / "checkpoints" / "encoder_bank" / "R_1.bin"
    R = load_matrix(path)
    R[0, 1] += 1.0
    save_matrix(path, R)
    assert main(["validate-bank", str(run_dir / "checkpoints")]) == EXIT_RUNTIME
    cap = capsys.readouterr()
    assert "FAIL encoder_bank/R_1.bin" in cap.out and "R_1.bin" in cap.err


def test_validate_bank_rejects_indefinite(tmp_path, capsys):
    save_matrix(tmp_path / "R_0.bin", np.diag([1.0, -1.0]))
    assert main(["validate-bank", str(tmp_path)]) == EXIT_RUNTIME
    assert "psd=False" in capsys.readouterr().out


def test_validate_bank_empty_or_missing_exit_2(tmp_path):
    assert main(["validate-bank", str(tmp_path)]) == EXIT_USAGE
    assert main(["validate-bank", str(tmp_path / "absent")]) == EXIT_USAGE


def test_report_matches_metrics_json(run_dir, tmp_path, capsys):
    capsys.readouterr()
    out = tmp_path / "m.json"
    assert main(["report", str(run_dir), "--out", str(out)]) == EXIT_OK
    expected = (run_dir / "metrics.json").read_text()
    assert capsys.readouterr().out == expected
    assert out.read_text() == expected


def test_report_from_bare_csv(tmp_path, capsys):
    p = tmp_path / "m.csv"
    p.write_text(",t0,t1,t2\nt0,0.9,,\nt1,0.8,0.95,\nt2,0.85,0.9,0.95\n")
    assert main(["report", str(p)]) == EXIT_OK
    m = json.loads(capsys.readouterr().out)
    assert abs(m["A_f"] - 0.9) < 1e-15 and abs(m["A_l"] - 2.8 / 3) < 1e-15
    assert main(["report", str(tmp_path / "none.csv")]) == EXIT_USAGE


def test_gen_sbm_roundtrip(tmp_path):
    out = tmp_path / "data"
    rc = main(["gen-sbm", "--out", str(out), "--blocks", "5,6,7", "--feature-dim", "3", "--seed", "4"])
    assert rc == EXIT_OK
    ds = load_dataset(out)
    assert ds.num_nodes == 18 and ds.features.shape[1] == 3 and ds.class_count == 3


def test_files_dataset_runs_through_cli(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-sbm", "--out", str(data), "--blocks", "20,20,20,20", "--feature-dim", "6",
                 "--feature-shift", "3"]) == EXIT_OK
    c = tiny_config()
    c.dataset.kind, c.dataset.path = "files", str(data)
    cfg = tmp_path / "files.json"
    cfg.write_text(dump_config(c))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--no-checkpoints"]) == EXIT_OK
    assert len(json.loads((out / "metrics.json").read_text())["per_task_A_t"]) == 2


def _sweep(tmp_path, tiny_json, name, workers="1"):
    out = tmp_path / name
    rc = main(["sweep", "--config", str(tiny_json), "--out", str(out), "--workers", workers,
               "--override", 'sweep={"gammas": [0.01, 0.1], "alphas": [1, 2], "seeds": [0, 1]}'])
    assert rc == EXIT_OK
    return out


def test_sweep_grid_and_determinism(tmp_path, tiny_json):
    a = _sweep(tmp_path, tiny_json, "a")
    with open(a / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 and not any(r["error"] for r in rows)
    assert {(r["gamma"], r["alpha"], r["seed"]) for r in rows} == {
        (g, al, s) for g in ("0.01", "0.1") for al in ("1", "2") for s in ("0", "1")
    }
    best = json.loads((a / "best.json").read_text())
    assert best["runs"] == 2
    with open(a / "sweep_summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    b = _sweep(tmp_path, tiny_json, "b", workers="2")
    assert (a / "sweep.csv").read_text() == (b / "sweep.csv").read_text()


def test_sweep_summary_std_and_ties():
    rows = [
        {"gamma": 0.1, "alpha": 1, "seed": 0, "A_avg_val": 0.5, "A_f_val": 0.5, "error": ""},
        {"gamma": 0.1, "alpha": 1, "seed": 1, "A_avg_val": 0.7, "A_f_val": 0.5, "error": ""},
        {"gamma": 1.0, "alpha": 1, "seed": 0, "A_avg_val": 0.6, "A_f_val": 0.5, "error": ""},
        {"gamma": 1.0, "alpha": 1, "seed": 1, "A_avg_val": None, "A_f_val": None, "error": "X: y"},
    ]
    summary, best = summarize_sweep(rows)
    assert summary[0]["A_avg_val_std"] == pytest.approx(np.std([0.5, 0.7], ddof=1))
    assert summary[1]["failed"] == 1 and summary[1]["A_avg_val_mean"] == 0.6
    # equal means: the earlier grid point wins
    assert best["gamma"] == 0.1


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "adrgraph.cli", "validate-bank", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_USAGE and "no matrix files" in res.stderr


def test_metrics_conform_to_documented_schema(run_dir, tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads((Path(__file__).resolve().parents[1] / "docs" / "metrics.schema.json").read_text())
    jsonschema.validate(json.loads((run_dir / "metrics.json").read_text()), schema)
    c = tiny_config(method="joint")
    c.debug.track_drift = True
    cfg = tmp_path / "j.json"
    cfg.write_text(dump_config(c))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "j"), "--no-checkpoints"]) == EXIT_OK
    jsonschema.validate(json.loads((tmp_path / "j" / "metrics.json").read_text()), schema)
    c.method = "bare"
    cfg.write_text(dump_config(c))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--no-checkpoints"]) == EXIT_OK
    m = json.loads((tmp_path / "b" / "metrics.json").read_text())
    jsonschema.validate(m, schema)
    assert m["drift"]["mean_normalized"] > 0
