import csv
import io
import subprocess
import sys

import pytest

from sbcert.cli import OUTPUT_DIR_ENV, SYNTH_COLUMNS, main


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def run_cli(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr().out


def test_synth_row(capsys):
    code, out = run_cli(["synth", "--system", "unstable1d", "--mode", "tv", "--horizon", "5", "--degree", "4"], capsys)
    assert code == 0
    assert out.splitlines()[0] == ",".join(SYNTH_COLUMNS)
    (row,) = rows(out)
    assert row["status"] == "optimal" and row["mode"] == "tv"
    assert 0.0 < float(row["bound"]) <= 1.0
    assert float(row["bound"]) == pytest.approx(1.0 - float(row["alpha"]) - float(row["beta_sum"]))


def test_tv_dominates_ti_through_cli(capsys):
    code, out = run_cli(["synth", "--system", "vanderpol", "--mode", "ti,tv", "--horizon", "10"], capsys)
    assert code == 0
    by_mode = {r["mode"]: float(r["bound"]) for r in rows(out)}
    assert by_mode["tv"] >= by_mode["ti"] - 1e-6


def test_synth_output_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"s{k}.csv"
        assert main(["synth", "--system", "unstable1d", "--horizon", "3,5", "--mode", "ti,tv", "--mc",
                     "--trajectories", "5000", "--seed", "7", "--omit-timing", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_mc_output_is_byte_identical(tmp_path):
    outs = []
    for k, workers in enumerate((1, 2)):
        path = tmp_path / f"m{k}.csv"
        assert main(["mc", "--system", "unstable1d", "--horizon", "5", "--trajectories", "100000", "--seed", "7",
                     "--workers", str(workers), "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    (row,) = rows(outs[0].decode())
    assert row["seed"] == "7" and row["trajectories"] == "100000"
    assert float(row["ci_low"]) <= float(row["estimate"]) <= float(row["ci_high"])


def test_dp_row(capsys):
    code, out = run_cli(["dp", "--system", "unstable2d", "--horizon", "3", "--cells", "40"], capsys)
    assert code == 0
    (row,) = rows(out)
    assert 0.0 <= float(row["ci_low"]) <= float(row["estimate"]) <= float(row["ci_high"]) <= 1.0


def test_compare_rows(capsys):
    code, out = run_cli(["compare", "--system", "unstable1d-obstacle", "--horizon", "5", "--trajectories", "5000"],
                        capsys)
    assert code == 0
    got = rows(out)
    assert [r["mode"] for r in got] == ["meta", "tv"]
    for r in got:
        assert float(r["bound"]) <= float(r["mc_ci_high"])


def test_timeout_row(capsys):
    code, out = run_cli(["synth", "--system", "unstable1d", "--horizon", "5", "--time-budget", "0.001"], capsys)
    (row,) = rows(out)
    assert row["status"] == "timeout" and row["bound"] == "0"
    assert code == 1


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert main(["dp", "--system", "unstable1d", "--horizon", "2", "--cells", "50"]) == 0
    assert (tmp_path / "dp_unstable1d.csv").exists()


def test_file_input(tmp_path, capsys):
    path = tmp_path / "toy.toml"
    path.write_text("""\
[system]
drift = ["0.5*x1 + w1"]
[noise]
variances = [0.01]
[sets]
safe_lo = [-1.0]
safe_hi = [1.0]
init_lo = [-0.1]
init_hi = [0.1]
""")
    code, out = run_cli(["synth", "--file", str(path), "--horizon", "4"], capsys)
    assert code == 0
    (row,) = rows(out)
    assert row["system"] == "toy" and float(row["bound"]) > 0.5


def test_bad_file_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('[system]\ndrift = ["x1 +* 2"]\n[noise]\nvariances = [0.1]\n[sets]\n')
    assert main(["synth", "--file", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err


def test_usage_errors_exit_2(capsys):
    assert main(["synth", "--system", "nope"]) == 2
    assert main(["synth", "--system", "unstable1d-obstacle", "--mode", "ti", "--horizon", "3"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["synth"])
    assert exc.value.code == 2
    assert main(["dp", "--system", "dubins", "--horizon", "2"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sbcert.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout
