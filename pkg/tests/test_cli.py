"""End-to-end command behavior: files written, precedence, exit codes.

Commands run in-process through main(argv) so the tests stay fast; the
console script binds to the same entry point.
"""

import numpy as np
import pytest

from egsearch.cli import OUT_ENV, main
from egsearch.data import load_dataset, make_dataset
from egsearch.space import parse_architecture

FAST = ["--dataset-n", "200", "--epochs", "2", "--dim", "4"]


@pytest.fixture(autouse=True)
def isolated_out(monkeypatch, tmp_path):
    monkeypatch.delenv(OUT_ENV, raising=False)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_search_writes_all_outputs(tmp_path):
    out = tmp_path / "run"
    assert run("search", *FAST, "--output-dir", out) == 0
    for name in ("metrics.csv", "architecture.json", "architecture.dot",
                 "summary.txt"):
        assert (out / name).exists(), name
    code = parse_architecture((out / "architecture.json").read_text())
    assert code.n == 4
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,train_loss,valid_loss,tau,wall_seconds"
    summary = (out / "summary.txt").read_text()
    assert "derived_bits=" in summary
    assert "edge (0, 1):" in summary


def test_exported_code_evaluates(tmp_path):
    out = tmp_path / "run"
    assert run("search", *FAST, "--output-dir", out) == 0
    rc = run("evaluate", out / "architecture.json", *FAST,
             "--retrain-epochs", 2, "--output-dir", out)
    assert rc == 0
    report = (out / "evaluation.txt").read_text()
    for field in ("train_acc=", "valid_acc=", "test_acc=", "final_loss="):
        assert field in report


def test_repeated_runs_are_byte_identical(monkeypatch, tmp_path):
    # the env override keeps the echoed config identical across both runs
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv(OUT_ENV, str(a))
    assert run("search", *FAST) == 0
    monkeypatch.setenv(OUT_ENV, str(b))
    assert run("search", *FAST) == 0
    for name in ("architecture.json", "architecture.dot", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def strip_wall(path):
        rows = [line.split(",")[:4] for line in path.read_text().splitlines()]
        return rows

    assert strip_wall(a / "metrics.csv") == strip_wall(b / "metrics.csv")


def test_flags_override_file_which_overrides_defaults(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("epochs=3\nseed=5\ndataset_n=200\ndim=4\n")
    out = tmp_path / "run"
    rc = run("search", "--config", cfg_file, "--epochs", 2,
             "--output-dir", out)
    assert rc == 0
    summary = (out / "summary.txt").read_text()
    assert "epochs=2" in summary      # flag beats file
    assert "seed=5" in summary        # file beats default
    assert "batch_size=64" in summary  # untouched default


def test_output_dir_env_var_wins(monkeypatch, tmp_path):
    env_dir = tmp_path / "env_out"
    monkeypatch.setenv(OUT_ENV, str(env_dir))
    assert run("search", *FAST, "--output-dir", tmp_path / "flag_out") == 0
    assert (env_dir / "architecture.json").exists()
    assert not (tmp_path / "flag_out").exists()


def test_invalid_config_fails_before_any_compute(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("search", "--epochs", 0, "--output-dir", out) == 2
    assert "epochs" in capsys.readouterr().err
    assert not out.exists()


def test_evaluate_rejects_mismatched_dimensions(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("search", *FAST, "--output-dir", out) == 0
    rc = run("evaluate", out / "architecture.json", *FAST,
             "--nodes", 3, "--output-dir", out)
    assert rc == 2
    assert "do not match" in capsys.readouterr().err


def test_evaluate_rejects_missing_code_file(tmp_path, capsys):
    rc = run("evaluate", tmp_path / "nope.json", *FAST)
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_baseline_report_schema_matches_evaluate(tmp_path):
    out = tmp_path / "run"
    rc = run("baseline", *FAST, "--baseline-budget", 2,
             "--baseline-retrain-epochs", 1, "--output-dir", out)
    assert rc == 0
    report = (out / "baseline.txt").read_text()
    assert "budget=2" in report
    assert report.count("trial=") == 2
    assert "best (by valid_acc)" in report
    # per-result schema identical to the evaluation report
    for field in ("train_acc=", "valid_acc=", "test_acc=", "final_loss="):
        assert report.count(field) == 3  # two trials plus the best block


def test_verify_propositions_report_and_exit(tmp_path, capsys):
    out = tmp_path / "audit"
    rc = run("verify-propositions", "--k-max", 4, "--draws", 20000,
             "--out", out)
    assert rc == 0
    text = (out / "audit.txt").read_text()
    assert "K=2  M=2: enumerated 3      formula 3      AGREE" in text
    assert "K=3  M=2: enumerated 6      formula 9      DISAGREE-REPORTED" in text
    assert "summary: PASS" in text
    capsys.readouterr()


def test_verify_propositions_rejects_oversized_ranges(capsys):
    assert run("verify-propositions", "--k-max", 40) == 2
    assert "k_max" in capsys.readouterr().err


def test_dump_dataset_round_trips(tmp_path):
    out = tmp_path / "data"
    rc = run("dump-dataset", "--dataset", "parity", "--dataset-bits", 4,
             "--output-dir", out)
    assert rc == 0
    loaded = load_dataset((out / "dataset.txt").read_text())
    built = make_dataset("parity", bits=4, seed=0)
    assert np.array_equal(loaded.features, built.features)
    assert np.array_equal(loaded.labels, built.labels)
    for name in ("train", "valid", "test"):
        assert np.array_equal(
            np.sort(loaded.splits[name]), np.sort(built.splits[name])
        )
