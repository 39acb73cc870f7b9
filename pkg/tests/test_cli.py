import json

import pytest

from asymcl.cli import main
from asymcl.harness import RESULT_COLUMNS, load_results

SMALL = ["--epochs1", "1", "--epochs2", "1", "--total", "200", "--batch-size", "64"]


def test_run_csv_to_stdout(capsys):
    assert main(["run", "--scenario", "80:20", "--loss", "acl", "--eta", "60", *SMALL]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS) and len(lines) == 2
    assert lines[1].startswith("80:20,acl,60.000000,0.000000,0.070000,0,")


def test_run_json_file_with_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "70:30", "loss": "cl", "seed": 3}))
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(cfg), "--seed", "5", "--format", "json", "--out", str(out), *SMALL]) == 0
    (row,) = load_results(out)
    assert row.scenario == "70:30" and row.loss == "cl" and row.seed == 5


def test_run_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["run", "--seed", "9", "--out", str(p), *SMALL]) == 0
    strip = [[line.rsplit(",", 1)[0] for line in p.read_text().splitlines()] for p in (a, b)]
    assert strip[0] == strip[1]


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "10:90"],
    ["run", "--tau", "0"],
    ["run", "--eta", "-1"],
    ["run", "--data", "idx"],
    ["run", "--config", "/nonexistent/config.json"],
])
def test_run_validation_errors(argv, capsys):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_run_failure_row_exit_code(tmp_path, capsys):
    code = main(["run", "--data", "idx", "--images", str(tmp_path / "x"), "--labels", str(tmp_path / "y"), *SMALL])
    assert code == 1
    assert "FileNotFoundError" in capsys.readouterr().err


def test_bad_choice_exits():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--loss", "triplet"])
    assert exc.value.code != 0


def test_grid_small(tmp_path):
    out, runs = tmp_path / "g.csv", tmp_path / "runs.csv"
    code = main(["grid", "--table", "losses", "--scenario", "90:10", "--repeats", "2",
                 "--out", str(out), "--runs-out", str(runs), *SMALL])
    assert code == 0
    cells = load_results(out)
    assert [(r.loss, r.eta, r.gamma) for r in cells] == [
        ("cl", 0.0, 0.0), ("fcl", 0.0, 1.0), ("acl", 300.0, 0.0), ("afcl", 300.0, 2.0), ("afcl", 300.0, 7.0)]
    assert len(load_results(runs)) == 10


def test_grid_eta_subset(tmp_path):
    out = tmp_path / "eta.csv"
    assert main(["grid", "--table", "eta", "--scenarios", "60:40,95:5", "--repeats", "1",
                 "--out", str(out), *SMALL]) == 0
    rows = load_results(out)
    assert len(rows) == 12 and [r.scenario for r in rows[:6]] == ["60:40"] * 6


def test_check_subset(capsys):
    assert main(["check", "--only", "degenerate", "entropy"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2 and "2/2 checks passed" in out


def test_info_theory_positional(capsys):
    assert main(["info-theory", '{"p": [0.5, 0.5], "q": [0.9, 0.1], "n": 8}']) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["entropy"] == 1.0 and rep["uniform_entropy"] == 3.0
    assert rep["cross_entropy"] == pytest.approx(rep["entropy"] + rep["kl_divergence"], abs=1e-12)


def test_info_theory_file_and_stdin(tmp_path, monkeypatch, capsys):
    f = tmp_path / "d.json"
    f.write_text('{"joint": [[0.25, 0.25], [0.25, 0.25]], "estimate": [[0.25, 0.25], [0.25, 0.25]]}')
    assert main(["info-theory", "--input", str(f)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mutual_information"] == pytest.approx(0.0, abs=1e-15)
    assert rep["joint_entropy"] == 2.0
    import io
    monkeypatch.setattr("sys.stdin", io.StringIO('{"p": [1.0]}'))
    assert main(["info-theory"]) == 0
    assert json.loads(capsys.readouterr().out)["entropy"] == 0.0


@pytest.mark.parametrize("text", ['{"p": [0.5, 0.6]}', "[1, 2]", "not json", "{}"])
def test_info_theory_errors(text):
    assert main(["info-theory", text]) == 2
