import json
import subprocess
import sys

import pytest

from uripr import __version__
from uripr.cli import main

SMALL_GRID = ["--grid", "-20:20:2001"]


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def manifest(out):
    lines = (out / "MANIFEST").read_text().splitlines()
    return dict(line.split(" = ", 1) for line in lines)


def test_project_writes_trace_with_weights(tmp_path):
    code, out = run(tmp_path, "p", "project", "--kmax", "16", *SMALL_GRID)
    assert code == 0
    header = (out / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["k", "alpha", "theta_index", "gain_value", "gain_status", "bound_over_k"]
    assert header[6:] == ["weight_0", "weight_1"]
    m = manifest(out)
    assert set(m) == {"command", "config_hash", "seed", "version", "files", "status"}
    assert m["command"] == "project" and m["version"] == __version__ and m["status"] == "ok"
    assert len(m["config_hash"]) == 64
    assert m["files"] == "trace.csv, weights.csv, report.jsonl"


def test_runs_are_byte_identical(tmp_path):
    args = ["sequential", "--n", "500", "--runs", "10", "--seed", "5"]
    _, a = run(tmp_path, "a", *args)
    _, b = run(tmp_path, "b", *args)
    for name in ("MANIFEST", "growth.csv", "type1.jsonl", "report.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_hash(tmp_path):
    _, a = run(tmp_path, "a", "rate", "--seed", "1")
    _, b = run(tmp_path, "b", "rate", "--seed", "2")
    assert manifest(a)["config_hash"] != manifest(b)["config_hash"]


def test_output_directory_not_hashed(tmp_path):
    _, a = run(tmp_path, "a", "rate")
    _, b = run(tmp_path, "b", "rate")
    assert manifest(a)["config_hash"] == manifest(b)["config_hash"]


@pytest.mark.parametrize("argv", [
    ["gain"],
    ["bogus"],
    [],
    ["project", "--grid", "1:2"],
    ["project", "--kmax", "many"],
    ["subprob", "--experiment", "nope"],
    ["project", "--family", "zipf"],
])
def test_usage_errors(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path / "u")]) == 1
    assert "uripr: error:" in capsys.readouterr().err


def test_gain_names_missing_family(tmp_path, capsys):
    main(["gain", "--out", str(tmp_path / "g")])
    assert "family" in capsys.readouterr().err


def test_gain_with_family(tmp_path):
    code, out = run(tmp_path, "g", "gain", "--family", "bernoulli:0.4..0.6/5", "--alt",
                    "bernoulli:0.5")
    assert code == 0
    rec = json.loads((out / "gain.jsonl").read_text())
    assert rec["status"] == "exact"


def test_invariant_failure_exits_two(tmp_path, capsys):
    code, out = run(tmp_path, "e", "estat", "--kmax", "1", *SMALL_GRID)
    assert code == 2
    assert "estat_slack_within_0.05" in capsys.readouterr().err
    assert manifest(out)["status"] == "failed: estat_slack_within_0.05"
    rec = json.loads((out / "report.jsonl").read_text().splitlines()[0])
    assert rec["passed"] is False


def test_config_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\ncommand = subprob\nexperiment = budget\nsupport = 1000\n")
    code, out = run(tmp_path, "c", "--config", str(cfg))
    assert code == 0
    assert manifest(out)["command"] == "subprob"
    rec = json.loads((out / "budget.jsonl").read_text())
    assert rec["verification"]["passed"] is True


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\ncommand = subprob\nexperiment = budget\n")
    code, out = run(tmp_path, "c", "--config", str(cfg), "--experiment", "harmonic")
    assert code == 0 and (out / "harmonic.csv").exists()


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\ncommand = rate\ncolour = blue\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "x")]) == 1


@pytest.mark.parametrize("command,experiment,expected", [
    ("subprob", "harmonic", "harmonic.csv"),
    ("subprob", "dominated", "dominated.jsonl"),
    ("rate", "bernoulli", "rate.csv"),
    ("rate", "geometric", "rate.csv"),
    ("epower", "bernoulli", "epower.csv"),
])
def test_experiments(tmp_path, command, experiment, expected):
    code, out = run(tmp_path, experiment, command, "--experiment", experiment, "--kmax", "50")
    assert code == 0
    assert (out / expected).stat().st_size > 0
    assert all(json.loads(line)["passed"] for line in (out / "report.jsonl").read_text().splitlines())


def test_harmonic_table(tmp_path):
    _, out = run(tmp_path, "s", "subprob")
    rows = (out / "harmonic.csv").read_text().splitlines()
    assert rows[0] == "n,divergence,mass,status"
    assert [r.split(",")[0] for r in rows[1:]] == ["4", "10", "100"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "uripr", "rate", "--out", str(tmp_path / "m")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
