"""CSV, JSON and SVG output of sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .experiments import RateFit, SweepResult, SweepRow, select

PROBE_KEYS = ("eps_hat", "rho_hat", "probe_trace_gamma12", "probe_trace_sliver_grad")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "" if math.isnan(v) else "%.17g" % v


def header(J: int) -> list:
    cols = ["d", "delta", "lambda_m", "J_m"]
    cols += [f"kappa_{k}" for k in range(1, J + 1)]
    cols += [f"mu_{k}" for k in range(1, J + 1)]
    cols += [f"r_{k}" for k in range(1, J + 1)]
    cols += list(PROBE_KEYS)
    cols += [f"probe_tau_{k}" for k in range(1, J + 1)]
    cols += [f"probe_tau_residual_{k}" for k in range(1, J + 1)]
    cols += ["max_residual", "orthonormality", "error"]
    return cols


def row_dict(row: SweepRow) -> dict:
    out = {"d": row.d, "delta": row.delta, "lambda_m": row.lambda_m, "J_m": row.J_m,
           "max_residual": row.max_residual, "orthonormality": row.orthonormality,
           "error": row.error}
    for name, vals in (("kappa", row.kappa), ("mu", row.mu), ("r", row.r)):
        for k, v in enumerate(vals, 1):
            out[f"{name}_{k}"] = v
    if row.probe:
        for k, v in row.probe.items():
            out[{"probe_eps_hat": "eps_hat", "probe_rho_hat": "rho_hat"}.get(k, k)] = v
    return out


def csv_text(rows: Sequence) -> str:
    """Deterministic CSV text of sweep rows (SweepRow or dict)."""
    dicts = [row_dict(r) if isinstance(r, SweepRow) else r for r in rows]
    J = max([int(r.get("J_m") or 0) for r in dicts] + [1])
    cols = header(J)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in dicts:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def read_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if v == "":
                    row[k] = None
                elif k == "error":
                    row[k] = v
                elif k == "J_m":
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

def _decades(lo: float, hi: float) -> list:
    return [10.0**k for k in range(int(math.floor(math.log10(lo))), int(math.ceil(math.log10(hi))) + 1)]


def loglog_svg(d, q, fit: Optional[RateFit] = None, *, title: str = "",
               ylabel: str = "|q|", width: int = 640, height: int = 480) -> str:
    """Static SVG 1.1 log-log plot with data points, fitted line and slope label."""
    d = np.asarray(d, dtype=float)
    q = np.abs(np.asarray(q, dtype=float))
    keep = np.isfinite(q) & (q > 0) & (d > 0)
    d, q = d[keep], q[keep]
    ml, mr, mt, mb = 80, 30, 40, 60
    pw, ph = width - ml - mr, height - mt - mb
    if d.size == 0:
        d, q = np.array([1e-3, 1e-2]), np.array([1e-3, 1e-2])
    xlo, xhi = math.log10(d.min()) - 0.1, math.log10(d.max()) + 0.1
    ylo, yhi = math.log10(q.min()) - 0.2, math.log10(q.max()) + 0.2

    def X(v):
        return ml + (math.log10(v) - xlo) / (xhi - xlo) * pw

    def Y(v):
        return mt + (yhi - math.log10(v)) / (yhi - ylo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="white" stroke="black"/>']
    for t in _decades(10**xlo, 10**xhi):
        if xlo <= math.log10(t) <= xhi:
            x = X(t)
            out.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.2f}" y="{mt + ph + 20}" font-size="12" text-anchor="middle">{t:.0e}</text>')
    for t in _decades(10**ylo, 10**yhi):
        if ylo <= math.log10(t) <= yhi:
            y = Y(t)
            out.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
            out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" font-size="12" text-anchor="end">{t:.0e}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 15}" font-size="14" text-anchor="middle">d</text>')
    out.append(f'<text x="20" y="{mt + ph / 2}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 20 {mt + ph / 2})">{ylabel}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="25" font-size="15" text-anchor="middle">{title}</text>')
    if fit is not None:
        xs = np.array([d.min(), d.max()])
        ys = np.exp(fit.intercept) * xs**fit.slope
        out.append(f'<line x1="{X(xs[0]):.2f}" y1="{Y(ys[0]):.2f}" x2="{X(xs[1]):.2f}" '
                   f'y2="{Y(ys[1]):.2f}" stroke="steelblue" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + 10}" y="{mt + 20}" font-size="14">slope={fit.slope:.2f}</text>')
    for a, b in zip(d, q):
        out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="4" fill="firebrick"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------

def emit_report(rows: Sequence, fits: dict, outdir, *, name: str = "sweep",
                summary: Optional[dict] = None, plot: Optional[str] = None) -> dict:
    """Write ``<name>.csv``, ``<name>.json`` and ``<name>.svg`` into ``outdir``.

    ``fits`` maps quantity names to :class:`RateFit`; the plot shows ``plot``
    (default: the first fitted quantity).
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{name}.csv", "json": out / f"{name}.json", "svg": out / f"{name}.svg"}
    paths["csv"].write_text(csv_text(rows))
    q = plot or (next(iter(fits)) if fits else "r_1")
    doc = dict(summary or {})
    doc["fits"] = {k: f.to_dict() for k, f in fits.items()}
    doc["plot"] = q
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    dicts = [row_dict(r) if isinstance(r, SweepRow) else r for r in rows]
    ds = [r["d"] for r in dicts if not r.get("error")]
    qs = [select(r, q) for r in dicts if not r.get("error")]
    paths["svg"].write_text(loglog_svg(ds, qs, fits.get(q), title=f"{name}: {q}", ylabel=f"|{q}|"))
    return {k: str(v) for k, v in paths.items()}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def summary_of(result: SweepResult, checks: list) -> dict:
    return {"scenario": result.scenario.to_dict(), "noise_floor": result.noise_floor,
            "failed_rows": result.failed,
            "timings": [{"d": r.d, **r.timings} for r in result.rows],
            "criteria": checks, "pass": all(c["pass"] for c in checks)}
