import csv
import subprocess
import sys

import pytest

from smllg.cli import main
from smllg.mesh import read_mesh

FAST = ["--set", "n=2", "--set", "J=3"]


def blocks(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path", "t", "exchange_sq", "exchange", "field_sq", "field", "total",
                       "curl_sq"]
    tags = []
    for r in rows[1:]:
        if not tags or tags[-1] != r[0]:
            tags.append(r[0])
    return tags


def test_check_default_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    for name in ("rotation", "mesh", "oracle", "constraint"):
        assert name in out
    assert "FAIL" not in out


def test_check_obtuse_mesh_fails(capsys):
    assert main(["check", "--set", "mesh_perturb=2", "--set", "n=2"]) != 0
    out = capsys.readouterr().out
    assert "mesh" in out and "FAIL" in out


def test_check_suite_filter(capsys):
    assert main(["check", "--suite", "rotation"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("rotation")


@pytest.mark.parametrize("args", [["--set", "theta=1.5"], ["--set", "lambda1=0"],
                                  ["--set", "bogus=1"], ["--set", "J=x"],
                                  ["--config", "/nonexistent.cfg"]])
def test_config_errors_exit_2(args, capsys):
    assert main(["run"] + args) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_ensemble_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["ensemble", *FAST, "--set", "L=3", "--retain-paths", "3", "--out", str(out)]) == 0
    assert blocks(out / "energy.csv") == ["0", "1", "2", "mean"]
    for name in ("error.csv", "paths.csv", "plot.gp", "manifest.txt"):
        assert (out / name).exists()
    with open(out / "error.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["L"] == "3"


def test_run_is_single_path(tmp_path):
    out = tmp_path / "o"
    assert main(["run", *FAST, "--out", str(out)]) == 0
    assert blocks(out / "energy.csv") == ["0", "mean"]


def test_convergence_rows(tmp_path):
    out = tmp_path / "o"
    assert main(["convergence", "--set", "n_list=2,3", "--set", "k_ratios=1", "--set", "L=2",
                 "--out", str(out)]) == 0
    with open(out / "error.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["n"] for r in rows] == ["2", "3"]
    assert set(rows[0]) == {"n", "k", "mean_sphere_error_sq", "L", "wallclock_s"}


def test_rerun_byte_identical_and_manifest_reproduces(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["ensemble", *FAST, "--set", "L=3", "--set", "g_mode=analytic", "--no-wallclock"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--workers", "2"]) == 0
    assert main(["ensemble", "--config", str(a / "manifest.txt"), "--out", str(c),
                 "--no-wallclock"]) == 0
    for name in ("energy.csv", "error.csv", "paths.csv"):
        ref = (a / name).read_bytes()
        assert (b / name).read_bytes() == ref
        assert (c / name).read_bytes() == ref


def test_mesh_info(tmp_path, capsys):
    dump = tmp_path / "mesh.txt"
    assert main(["mesh-info", "--set", "n=2", "--dump", str(dump)]) == 0
    out = capsys.readouterr().out
    assert "vertices 27" in out and "tets 48" in out and "pass" in out
    with open(dump) as fh:
        assert read_mesh(fh).n_edges == 98


def test_theta_gate(tmp_path, capsys):
    base = ["run", "--set", "n=4", "--set", "J=4", "--set", "theta=0.3", "--out", str(tmp_path)]
    assert main(base) == 2
    assert "allow-unstable-theta" in capsys.readouterr().err
    assert main(base + ["--allow-unstable-theta"]) in (0, 4)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", *FAST, "--out", str(blocker / "sub")]) == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "smllg.cli", "check", "--suite", "rotation"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "PASS" in res.stdout
