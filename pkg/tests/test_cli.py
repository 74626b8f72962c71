import json
import subprocess
import sys

import pytest

from dagbnb.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def inst_dir(tmp_path):
    out = tmp_path / "inst"
    assert main(["gen", "--nodes", "6", "--samples", "100", "--degree", "2", "--seed", "7",
                 "--out", str(out)]) == EXIT_OK
    return out


def test_gen_writes_four_files(inst_dir):
    assert sorted(p.name for p in inst_dir.iterdir()) == ["data.csv", "meta.json", "moral.txt", "true_dag.txt"]


def test_solve_eval_roundtrip(inst_dir, tmp_path, capsys):
    rep_path = tmp_path / "rep.json"
    rc = main(["solve", "--data", str(inst_dir / "data.csv"), "--super", str(inst_dir / "moral.txt"),
               "--mode", "persp", "--early-stop", "--out", str(rep_path)])
    assert rc == EXIT_OK
    rep = json.loads(rep_path.read_text())
    assert rep["status"] in {"optimal", "gap_reached", "time_limit", "node_limit"}
    assert "status=" in capsys.readouterr().out
    rc = main(["eval", "--true", str(inst_dir / "true_dag.txt"), "--est", str(rep_path)])
    assert rc == EXIT_OK
    assert capsys.readouterr().out.startswith("SHD ")


def test_solve_json_on_stdout(inst_dir, capsys):
    rc = main(["solve", "--data", str(inst_dir / "data.csv"), "--lambda", "3", "--mode", "bigm",
               "--deterministic"])
    assert rc == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["config"]["lambda_n"] == 3.0 and rep["config"]["mode"] == "bigm"


def test_oracle_matches_solve(inst_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    common = ["--data", str(inst_dir / "data.csv"), "--super", str(inst_dir / "moral.txt")]
    assert main(["oracle", *common, "--out", str(a)]) == EXIT_OK
    assert main(["solve", *common, "--rel-gap", "0", "--out", str(b)]) == EXIT_OK
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert ra["status"] == "exact"
    assert rb["ub"] == pytest.approx(ra["ub"], rel=1e-6)


def test_eval_identical_is_zero(inst_dir, capsys):
    t = str(inst_dir / "true_dag.txt")
    assert main(["eval", "--true", t, "--est", t]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "SHD 0"


@pytest.mark.parametrize("argv,flag", [
    (["solve", "--data", "x.csv", "--mu", "-1"], "--mu"),
    (["solve", "--data", "x.csv", "--mode", "socp"], "--mode"),
    (["gen", "--nodes", "1", "--samples", "5", "--out", "o"], "--nodes"),
    (["bench", "--modes", "persp,foo", "--out", "o"], "--modes"),
    (["solve"], "--data"),
])
def test_usage_errors_name_the_flag(argv, flag, capsys):
    assert main(argv) == EXIT_USAGE
    assert flag in capsys.readouterr().err


def test_io_errors_name_the_file(tmp_path, capsys):
    missing = str(tmp_path / "missing.csv")
    assert main(["solve", "--data", missing]) == EXIT_IO
    assert "missing.csv" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("3\n0 x\n")
    assert main(["eval", "--true", str(bad), "--est", str(bad)]) == EXIT_IO
    assert "bad.txt" in capsys.readouterr().err


def test_super_size_mismatch(inst_dir, tmp_path, capsys):
    g = tmp_path / "g.txt"
    g.write_text("3\n0 1\n")
    assert main(["solve", "--data", str(inst_dir / "data.csv"), "--super", str(g)]) == EXIT_USAGE
    assert "--super" in capsys.readouterr().err


def test_bench_subcommand(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--nodes", "4", "--seeds", "2", "--modes", "persp,bigm", "--out", str(out)]) == EXIT_OK
    assert (out / "bench_rows.csv").exists() and (out / "bench_summary.csv").exists()


def test_version_and_console_script():
    r = subprocess.run([sys.executable, "-m", "dagbnb.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("dagbnb ")
