from __future__ import annotations

import csv

import pytest

from absmac.cli import main, read_config


def test_run_prints_and_exports(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    assert main(["run", "--n", "4", "--seed", "3", "--trace", str(trace)]) == 0
    out = capsys.readouterr().out
    assert "terminated  True" in out and trace.exists()
    assert main(["replay", str(trace)]) == 0


def test_sweep_writes_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--n", "2", "4", "--scheduler", "uniform", "layers", "--trials", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert {r["scheduler"] for r in rows} == {"uniform", "layers"}


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "# sweep settings\n"
        "protocol = id-gen\n"
        "n = 2, 4\n"
        "scheduler.kind = layers\n"
        "trials = 2\n"
    )
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(cfg), "--n", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert {r["n"] for r in rows} == {"3"} and {r["protocol"] for r in rows} == {"id-gen"}


def test_read_config_normalizes_keys(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("scheduler.crash_p = 0.5\nexplore.depth = 12\ntape-bound = 3\nc_t = 2\n")
    assert read_config(cfg) == {"crash_p": "0.5", "depth": "12", "tape_bound": "3", "c_T": "2"}


def test_malformed_config_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("just words\n")
    assert main(["run", "--config", str(cfg), "--n", "2"]) == 2
    assert "expected 'key = value'" in capsys.readouterr().err


def test_explore_pass_and_fail_exit_codes(tmp_path):
    assert main(["explore", "--n", "2", "--inputs", "0,1", "--depth", "14", "--tape-bound", "4"]) == 0
    cx = tmp_path / "cx.jsonl"
    assert main(["explore", "--n", "2", "--inputs", "0,1", "--depth", "30", "--k", "1", "--out", str(cx)]) == 1
    assert cx.exists()
    assert main(["replay", str(cx)]) == 1


def test_explore_budget_refusal(capsys):
    assert main(["explore", "--n", "3", "--depth", "30", "--budget", "500"]) == 2
    assert "refusing" in capsys.readouterr().err


def test_violating_sweep_exits_nonzero(tmp_path):
    # with k=1 the race can decide both values
    code = main(["sweep", "--n", "2", "--inputs", "split", "--k", "1", "--trials", "60", "--out", str(tmp_path / "s.csv")])
    assert code == 1


def test_missing_n_is_reported(capsys):
    assert main(["run"]) == 2
    assert "--n" in capsys.readouterr().err


def test_run_rejects_multiple_settings(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n = 2, 4\n")
    assert main(["run", "--config", str(cfg)]) == 2
