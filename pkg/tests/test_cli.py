import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.io

from hadamard_lab.cli import main


def test_solve_square_prints_five_eigenvalues(capsys):
    assert main(["solve", "--square", "--count", "5", "--nx", "32", "--ny", "32"]) == 0
    vals = [float(line.split()[1]) for line in capsys.readouterr().out.splitlines()]
    assert np.allclose(vals, np.pi**2 * np.array([2, 5, 5, 8, 10]), rtol=2e-5)


def test_solve_domain_file_and_dumps(tmp_path, capsys):
    dom = tmp_path / "d.json"
    dom.write_text(json.dumps({"width": 1.0, "height": 1.0, "side_condition": "periodic",
                               "bottom": {"family": "flat"}}))
    mesh_path = tmp_path / "mesh.txt"
    prefix = tmp_path / "sys"
    assert main(["solve", "--domain", str(dom), "--count", "1", "--nx", "8", "--ny", "32", "--single",
                 "--dump-mesh", str(mesh_path), "--dump-matrix", str(prefix)]) == 0
    assert float(capsys.readouterr().out.split()[1]) == pytest.approx(np.pi**2, rel=2e-3)
    assert mesh_path.read_text().startswith("nodes 297 triangles 512")
    K = scipy.io.mmread(f"{prefix}_K.mtx")
    assert K.shape[0] == 8 * 31


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["sweep", str(tmp_path / "missing.json")]) == 2
    assert main(["solve"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["solve", "--square", "--count", "0"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "bad", "d_count": 2}))
    assert main(["sweep", str(bad)]) == 2
    bad.write_text(json.dumps({"name": "bad", "shape": {"family": "zigzag"}}))
    assert main(["sweep", str(bad)]) == 2


def test_invalid_thread_environment(monkeypatch):
    monkeypatch.setenv("HADAMARD_THREADS", "zero")
    assert main(["scenarios"]) == 2


def test_scenarios_lists_builtins(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("strip-shift", "c1-half", "lipschitz", "probe-shift"):
        assert name in out


def test_sweep_then_report_is_idempotent(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"name": "s", "shape": {"family": "uniform_shift", "amplitude": 1.0},
                              "mesh": {"nx": 8, "ny": 64, "grading": 2.0},
                              "checks": [{"name": "slope", "quantity": "r_1", "low": 1.9, "high": 2.1}]}))
    out = tmp_path / "out"
    assert main(["sweep", str(sc), "--out", str(out)]) == 0
    assert "PASS  slope" in capsys.readouterr().out
    files = {p: (out / f"s.{p}").read_bytes() for p in ("csv", "json", "svg")}
    assert len(files["csv"].decode().splitlines()) == 7
    assert main(["report", str(out / "s.csv")]) == 0
    for p, data in files.items():
        assert (out / f"s.{p}").read_bytes() == data


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hadamard_lab", "scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0 and "flat" in proc.stdout
