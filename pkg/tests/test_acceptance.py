"""End-to-end acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
The Lipschitz sweep behind criteria 6 and 7 takes a few minutes.
"""
from dataclasses import replace

import numpy as np
import pytest

from hadamard_lab.cell import CellDomain, compute_c0, slope_constant, solve_special_V, solve_V0
from hadamard_lab.experiments import builtin_scenarios, counterexample, evaluate_check, fit_rate, run_row, run_sweep
from hadamard_lab.fem import _full_system
from hadamard_lab.hadamard import richardson, solve_domain
from hadamard_lab.mesh import ReferenceGrid
from hadamard_lab.report import csv_text

from conftest import ACCEPTANCE, record, square

SWEEPS = {}


def _sweep(name):
    if name not in SWEEPS:
        SWEEPS[name] = run_sweep(builtin_scenarios()[name])
    return SWEEPS[name]


@pytest.fixture(scope="module")
def lipschitz():
    summary, result = counterexample("cos", 1e-2, 5)
    SWEEPS["lipschitz"] = result
    return summary, result


def test_criterion_1_square_spectrum():
    grid = ReferenceGrid(64, 64, 1.0)
    levels = [np.array([p.lam for p in solve_domain(square(), g, 5).pairs]) for g in (grid, grid.refined(2))]
    lam = np.sort(richardson(*levels))
    err = np.max(np.abs(lam / (np.pi**2 * np.array([2, 5, 5, 8, 10])) - 1))
    assert record("1 square spectrum", err <= 1e-6, f"max rel err {err:.2e}")


def test_criterion_2_simple_eigenvalue():
    res = _sweep("strip-shift")
    kerr = max(abs(r.kappa[0] / (-2 * np.pi**2 * r.d) - 1) for r in res.rows)
    mu_err = max(abs(r.mu[0] / (np.pi**2 / (1 + r.d) ** 2) - 1) for r in res.rows)
    slope = fit_rate(res.rows, "r_1", floor=res.noise_floor).slope
    ok = kerr <= 1e-3 and 1.9 <= slope <= 2.1 and mu_err <= 1e-6
    assert record("2 strip shift", ok, f"kappa rel err {kerr:.1e}, r_1 slope {slope:.3f}, mu rel err {mu_err:.1e}")


def test_criterion_3_double_eigenvalue():
    res = _sweep("square-bump")
    s1 = fit_rate(res.rows, "r_1", floor=res.noise_floor).slope
    s2 = fit_rate(res.rows, "r_2", floor=res.noise_floor).slope
    last = res.rows[-1]
    rel = max(abs(r) / abs(k) for r, k in zip(last.r, last.kappa))
    sc = builtin_scenarios()["square-shift"]
    kerr = 0.0
    for d in (1e-2, 1e-3):
        row = run_row(sc, d)
        kerr = max(kerr, np.max(np.abs(np.sort(row.kappa) / (np.array([-8, -2]) * np.pi**2 * d) - 1)))
    ok = last.J_m == 2 and s1 >= 1.9 and s2 >= 1.9 and rel < 0.05 and kerr <= 1e-3
    assert record("3 square group", ok, f"J={last.J_m}, slopes {s1:.3f}/{s2:.3f}, "
                  f"|r|/|kappa| {rel:.1e} at d={last.d:g}, shift kappa rel err {kerr:.1e}")


def test_criterion_4_c1alpha_rate():
    res = _sweep("c1-half")
    slope = fit_rate(res.rows, "r_1", floor=res.noise_floor).slope
    assert record("4 C^{1,1/2} rate", 1.4 <= slope <= 1.7, f"r_1 slope {slope:.3f}")


def test_criterion_5_c1_little_o():
    res = _sweep("c1-half")
    chk = evaluate_check(res.rows, builtin_scenarios()["c1-half"].checks[1])
    assert record("5 C^1 o(d)", chk["pass"], "r/d ratios " + ", ".join(f"{v:.3f}" for v in chk["ratios"]))


def test_criterion_6_lipschitz_bound(lipschitz):
    _, result = lipschitz
    chk = evaluate_check(result.rows, builtin_scenarios()["lipschitz"].checks[0])
    assert record("6 Lipschitz bound", chk["pass"], f"max/median of |mu-lam|/d {chk['value']:.3f}")


def test_criterion_7_counterexample(lipschitz):
    s, _ = lipschitz
    ratios = ", ".join(f"{r['r_1_over_d']:.3f}" for r in s["rows"])
    detail = (f"r_1/d [{ratios}] -> {s['measured_limit']:.3f}; lambda_1*T*c_V (energy-normalized c_V) "
              f"{s['predicted']:.3f}; ratio {s['ratio']:.3f}; drift {s['measured_drift']:.1e}")
    record("7 counterexample", s["pass"], detail)
    # not a criterion: the L2-slope c_V inserted directly into lambda_1*T*c_V
    ACCEPTANCE.append(f"NOTE  7 mixed normalization  lambda_1*T*c_V with L2-slope c_V "
                      f"{s['predicted_mixed_normalization']:.2f}, ratio {s['ratio_mixed_normalization']:.3f}")
    assert s["pass"]


def test_criterion_8_abstract_scalings():
    res = _sweep("probe-shift")
    checks = [evaluate_check(res.rows, c, res.noise_floor) for c in builtin_scenarios()["probe-shift"].checks]
    detail = "; ".join(f"{c['name']} {c['value']:.3f}" for c in checks)
    assert record("8 abstract scalings", all(c["pass"] for c in checks), detail)


def test_criterion_9_solver_properties(lipschitz):
    names = ("strip-shift", "square-bump", "c1-half", "probe-shift", "lipschitz")
    for n in names:
        _sweep(n)
    rows = [r for n in names for r in SWEEPS[n].rows]
    res = max(r.max_residual for r in rows)
    orth = max(r.orthonormality for r in rows)
    again = run_sweep(builtin_scenarios()["strip-shift"])
    same = csv_text(again.rows) == csv_text(SWEEPS["strip-shift"].rows)
    ok = res <= 1e-10 and orth <= 1e-10 and same and all(r.ok for r in rows)
    assert record("9 solver properties", ok, f"max residual {res:.1e}, orthonormality {orth:.1e}, "
                  f"identical CSV {same}, {len(rows)} rows")


def test_criterion_10_cell_problem(lipschitz):
    s, _ = lipschitz
    cell = CellDomain("cos")
    grid = ReferenceGrid(64, 256, 1.5)
    C1 = slope_constant(0.04, 1.0)
    mesh = cell.mesh(grid)
    special = solve_special_V(cell, grid, mesh)
    c0 = compute_c0(special, cell, C1)
    sol = solve_V0(cell, c0, C1, mesh)
    v = sol.V0.nodal
    maxp = v.min() >= min(sol.data.min(), 0) - 1e-12 and v.max() <= max(sol.data.max(), 0) + 1e-12
    full, Kf, _, _, _ = _full_system(mesh)
    r = Kf @ full.restrict(v)
    bottom = np.unique(full.node_to_dof[mesh.node_index(np.arange(mesh.nx + 1), 0)])
    balance = abs(r[bottom].sum()) / np.abs(r[bottom]).sum()
    decay = abs(sol.q_residual) / np.max(np.abs(sol.data))
    frac = c0 / C1
    conv = s["c_V_self_convergence"]
    ok = maxp and balance <= 1e-8 and decay <= 1e-4 and 0 <= frac <= 1 and conv <= 5e-4
    assert record("10 cell problem", ok, f"max principle {maxp}, flux balance {balance:.1e}, "
                  f"decay {decay:.1e}, c0/C1 {frac:.4f}, c_V {s['c_V']:.4f} "
                  f"(self-convergence {conv:.1e})")
