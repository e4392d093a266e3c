import csv
import json

import pytest

from stable_sde.cli import EXIT_FLAGGED, EXIT_INVALID, EXIT_OK, dispatch, verify


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = dispatch([*argv, "--out", str(out)])
    return code, out


def test_usage_errors_exit_one(tmp_path, capsys):
    assert dispatch(["bogus"]) == EXIT_INVALID
    assert dispatch(["sample", "--no-such-flag"]) == EXIT_INVALID
    assert dispatch([]) == EXIT_INVALID
    assert dispatch(["sample", "--alpha", "3", "--out", str(tmp_path / "x")]) == EXIT_INVALID
    assert dispatch(["sample", "--set", "run.n", "--out", str(tmp_path / "x")]) == EXIT_INVALID
    assert dispatch(["sample", "--config", str(tmp_path / "missing.toml")]) == EXIT_INVALID
    assert "usage" in capsys.readouterr().err


def test_version_and_help():
    assert dispatch(["--version"]) == 0
    assert dispatch(["sample", "--help"]) == 0


def test_flagged_result_exit_two(tmp_path):
    code, _ = run(tmp_path, "a", "exit-time", "--n", "50", "--set", "scheme.t_cap=0.01",
                  "--set", "task.refine=false")
    assert code == EXIT_FLAGGED


def test_exit_time_outputs_and_determinism(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[run]\nn = 500\n[task]\nx0 = [0.0]\n")
    code1, a = run(tmp_path, "a", "exit-time", "--config", str(cfg), "--seed", "7")
    code2, b = run(tmp_path, "b", "exit-time", "--config", str(cfg), "--seed", "7", "--threads", "1")
    assert code1 == code2 == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    summary = json.loads((a / "exit-time.json").read_text())
    assert summary["seed"] == 7 and summary["config"]["run"]["seed"] == 7
    assert {"op", "params", "mean", "stderr", "ci95", "n", "seed", "flags", "runtime_s"} <= set(summary)
    assert summary["runtime_s"] is None
    side = json.loads((a / "exit-time_tail.meta.json").read_text())
    assert side["config_hash"] == summary["config_hash"] and side["seed"] == 7
    assert verify(a) == []


def test_seed_changes_output(tmp_path):
    _, a = run(tmp_path, "a", "sample", "--n", "200", "--seed", "1")
    _, b = run(tmp_path, "b", "sample", "--n", "200", "--seed", "2")
    assert (a / "sample_ecf.csv").read_bytes() != (b / "sample_ecf.csv").read_bytes()


def test_timing_flag_records_runtime(tmp_path):
    _, a = run(tmp_path, "a", "sample", "--n", "200", "--timing")
    assert json.loads((a / "sample.json").read_text())["runtime_s"] > 0


def test_verify_detects_tampering(tmp_path, capsys):
    _, a = run(tmp_path, "a", "sample", "--n", "200")
    assert dispatch(["verify", str(a)]) == EXIT_OK
    p = a / "sample_ecf.csv"
    p.write_text(p.read_text() + "\n")
    assert any("digest" in s for s in verify(a))
    assert dispatch(["verify", str(a)]) == EXIT_INVALID
    assert verify(tmp_path / "nowhere")


def test_harnack_csv_rows(tmp_path):
    code, out = run(tmp_path, "h", "harnack", "--alpha", "1", "--eps", "0.2,0.1,0.05",
                    "--n", "2000")
    assert code in (EXIT_OK, EXIT_FLAGGED)
    rows = list(csv.reader((out / "harnack_ratio.csv").open()))
    assert rows[0] == ["eps", "h0", "h0_se", "hw0", "hw0_se", "ratio", "ratio_se", "n", "seed"]
    assert len(rows) == 4


def test_generator_check_command(tmp_path):
    code, out = run(tmp_path, "g", "generator-check", "--alpha", "1")
    assert code == EXIT_OK
    body = json.loads((out / "generator-check.json").read_text())
    assert body["max_error"] < 1e-3


def test_simulate_dump(tmp_path):
    code, out = run(tmp_path, "s", "simulate", "--n", "3", "--x0", "0", "--set", "task.horizon=0.2")
    assert code == EXIT_OK
    rows = list(csv.reader((out / "paths.csv").open()))
    assert rows[0] == ["path_id", "t", "x1", "event"]
    assert {r[0] for r in rows[1:]} == {"0", "1", "2"}


def test_hoelder_refusal_is_invalid(tmp_path):
    code, _ = run(tmp_path, "h", "hoelder", "--n", "20", "--set", "model.dimension=2",
                  "--set", "task.grid=[[0.0,0.0],[0.1,0.0]]")
    assert code == EXIT_INVALID
