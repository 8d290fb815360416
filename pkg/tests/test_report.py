import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hadamard_lab.experiments import RateFit, SweepRow, fit_rate
from hadamard_lab.report import csv_text, emit_report, header, loglog_svg, read_csv

LADDER = 1e-2 * 0.5 ** np.arange(6)


def _rows():
    return [SweepRow(float(d), None, lambda_m=np.pi**2, J_m=1, kappa=[-2 * np.pi**2 * d], mu=[1.0],
                     r=[3 * np.pi**2 * d * d], max_residual=1e-13, orthonormality=1e-15) for d in LADDER]


def test_csv_has_header_plus_one_line_per_row():
    text = csv_text(_rows())
    lines = text.splitlines()
    assert len(lines) == 7
    assert lines[0].split(",") == header(1)
    rec = dict(zip(header(1), lines[1].split(",")))
    assert rec["eps_hat"] == "" and rec["probe_tau_1"] == "" and rec["error"] == ""
    assert float(rec["d"]) == 0.01


def test_header_columns_for_double_group():
    h = header(2)
    for c in ("kappa_2", "mu_2", "r_2", "probe_tau_2", "probe_tau_residual_2"):
        assert c in h
    assert h[:4] == ["d", "delta", "lambda_m", "J_m"]


def test_csv_round_trip_is_exact(tmp_path):
    rows = _rows()
    path = tmp_path / "a.csv"
    path.write_text(csv_text(rows))
    back = read_csv(path)
    assert [r["r_1"] for r in back] == [r.r[0] for r in rows]
    assert back[0]["eps_hat"] is None and back[0]["J_m"] == 1
    assert csv_text(back) == csv_text(rows)


def test_svg_is_valid_and_labels_slope():
    fit = RateFit(2.0, 0.0, 1.0, 6, 0)
    svg = loglog_svg(LADDER, LADDER**2, fit, title="t")
    assert "slope=2.00" in svg
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert sum(1 for e in root.iter() if e.tag.endswith("circle")) == 6


def test_svg_without_data_still_renders():
    ET.fromstring(loglog_svg([], []))


def test_emit_report_writes_three_files(tmp_path):
    rows = _rows()
    fits = {"r_1": fit_rate(rows, "r_1")}
    paths = emit_report(rows, fits, tmp_path, name="x", summary={"note": "n"})
    doc = json.loads((tmp_path / "x.json").read_text())
    assert doc["fits"]["r_1"]["slope"] == pytest.approx(2.0)
    assert doc["plot"] == "r_1" and doc["note"] == "n"
    assert "slope=2.00" in (tmp_path / "x.svg").read_text()
    assert set(paths) == {"csv", "json", "svg"}
