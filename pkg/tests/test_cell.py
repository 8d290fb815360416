import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hadamard_lab.cell import (CellDomain, cell_energy, compute_c0, predicted_extra, slope_constant, solve_cell,
                               solve_special_V, solve_V0)
from hadamard_lab.errors import DecayFailure
from hadamard_lab.fem import _full_system
from hadamard_lab.geometry import waveform
from hadamard_lab.mesh import ReferenceGrid

GRID = ReferenceGrid(32, 128, 1.5)


@pytest.fixture(scope="module", params=["cos", "tent"])
def rough(request):
    cell = CellDomain(request.param, ratio=1.0)
    mesh = cell.mesh(GRID)
    special = solve_special_V(cell, GRID, mesh)
    return cell, mesh, special


def _flat_energy_oracle(name, n=4096):
    # data eta - mean on a flat bottom: sum over Fourier modes of |a_k|^2 * 2 pi |k|
    X = np.arange(n) / n
    a = np.fft.fft(waveform(name).eta(X)) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    return float(np.sum(np.abs(a[k != 0]) ** 2 * 2 * np.pi * np.abs(k[k != 0])))


def test_cell_domain_validation():
    with pytest.raises(ValueError):
        CellDomain(L=4.0)
    with pytest.raises(ValueError):
        CellDomain("square")
    with pytest.raises(ValueError):
        CellDomain(ratio=-1.0)


def test_slope_constant():
    assert slope_constant(1.0, 1.0) == pytest.approx(np.sqrt(2) * np.pi)
    assert slope_constant(0.04, 1.0) == pytest.approx(np.sqrt(50) * np.pi)


def test_flat_cell_special_solution_is_linear():
    cell = CellDomain(ratio=0.0)
    s = solve_special_V(cell, ReferenceGrid(8, 32, 1.5))
    Y = s.field.mesh.nodes[:, 1]
    assert np.allclose(s.field.nodal, Y, atol=1e-12)
    assert s.far_slope == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(s.flux_nodal, -1.0, atol=1e-12)


@pytest.mark.parametrize("name", ["cos", "tent"])
def test_flat_cell_constants(name):
    out = cell_energy(CellDomain(name, ratio=0.0), GRID, C1=1.0)
    assert out["c0"] == pytest.approx(0.5, abs=1e-12)
    assert out["c_V"] == pytest.approx(_flat_energy_oracle(name), rel=1e-4)


def test_flat_cos_cell_energy_is_quarter_pi():
    assert _flat_energy_oracle("cos") == pytest.approx(np.pi / 4, rel=1e-12)


def test_special_solution_far_slope_and_positivity(rough):
    _, mesh, special = rough
    assert special.far_slope == pytest.approx(1.0, abs=1e-3)
    above = mesh.nodes[:, 1] > mesh.Y[:, 0].max()
    assert np.all(special.field.nodal[above] > 0)


@pytest.mark.parametrize("name", ["cos", "tent"])
def test_special_solution_flux_is_negative(name):
    # the L2-projected flux can overshoot near the tent's curvature jumps on coarse meshes
    special = solve_special_V(CellDomain(name), GRID.refined(2))
    assert np.all(special.flux_nodal < 0)


def test_c0_lies_in_data_range(rough):
    cell, _, special = rough
    c0 = compute_c0(special, cell, 1.0)
    assert 0.0 < c0 < 1.0
    assert compute_c0(special, cell, 3.0) == pytest.approx(3.0 * c0, rel=1e-13)


@pytest.mark.parametrize("C1", [1.0, 2.5])
def test_energy_identity_on_unit_cell(rough, C1):
    # V0 = C1 (Y - V) - const up to exp(-2 pi L): energy is C1*c0 - C1^2 * mean(eta)
    cell, mesh, special = rough
    c0 = compute_c0(special, cell, C1)
    sol = solve_V0(cell, c0, C1, mesh)
    assert sol.c_V == pytest.approx(C1 * c0 - C1**2 * 0.5, rel=1e-8)


def test_layer_satisfies_maximum_principle_and_decays(rough):
    cell, mesh, special = rough
    c0 = compute_c0(special, cell, 1.0)
    sol = solve_V0(cell, c0, 1.0, mesh)
    v = sol.V0.nodal
    assert v.min() >= min(sol.data.min(), 0.0) - 1e-12
    assert v.max() <= max(sol.data.max(), 0.0) + 1e-12
    X = np.linspace(0, 1, 64, endpoint=False)
    amp = [np.max(np.abs(sol.V0.evaluate(np.stack([X, np.full_like(X, y)], axis=1)))) for y in (1.5, 2.5)]
    assert amp[0] / amp[1] > 0.5 * np.exp(2 * np.pi)


def test_layer_has_zero_net_flux(rough):
    cell, mesh, special = rough
    sol = solve_V0(cell, compute_c0(special, cell, 1.0), 1.0, mesh)
    full, Kf, _, _, _ = _full_system(mesh)
    r = Kf @ full.restrict(sol.V0.nodal)
    bottom = np.unique(full.node_to_dof[mesh.node_index(np.arange(mesh.nx + 1), 0)])
    top = np.unique(full.node_to_dof[mesh.node_index(np.arange(mesh.nx + 1), mesh.ny)])
    scale = np.abs(r[bottom]).sum()
    assert abs(r[bottom].sum()) <= 1e-8 * scale
    assert abs(r[top].sum()) <= 1e-8 * scale


@settings(max_examples=10, deadline=None)
@given(s=st.floats(0.1, 10.0))
def test_energy_scales_quadratically_with_data(rough, s):
    cell, mesh, special = rough
    c0 = compute_c0(special, cell, 1.0)
    base = solve_V0(cell, c0, 1.0, mesh).c_V
    assert solve_V0(cell, s * c0, s, mesh).c_V == pytest.approx(s * s * base, rel=1e-10)


def test_wrong_constant_fails_to_decay(rough):
    cell, mesh, special = rough
    with pytest.raises(DecayFailure):
        solve_V0(cell, compute_c0(special, cell, 1.0) + 0.1, 1.0, mesh)


def test_cell_energy_converges_at_second_order():
    cell = CellDomain("cos", ratio=1.0)
    levels = [solve_cell(cell, GRID.refined(f), 1.0).c_V for f in (1, 2, 4)]
    ratio = (levels[0] - levels[1]) / (levels[1] - levels[2])
    assert ratio == pytest.approx(4.0, abs=0.6)


def test_predicted_extra_examples():
    lam = np.pi**2
    assert predicted_extra(lam, 1.0, 1e-3, 1e-3, 0.36) == pytest.approx(lam * 0.36e-3)
    # delta = sqrt(d): d^(3/2) scaling
    vals = [predicted_extra(lam, 1.0, d, np.sqrt(d), 0.36) for d in (1e-4, 1e-6)]
    assert vals[0] / vals[1] == pytest.approx(100**1.5)
    assert predicted_extra(1.0, 2.0, 1e-4, 1e-2, 0.5) == pytest.approx(2.0 * 1e-8 / 1e-2 * 0.5)
    assert predicted_extra(lam, 1.0, 1e-3, 1e-3, 0.0) == 0.0
    with pytest.raises(ValueError):
        predicted_extra(1.0, 1.0, 0.0, 1e-3, 0.3)


def test_energy_normalized_constant_is_independent_of_slope_convention():
    # c_V is quadratic in C1, so lam * T * c_V(C1/sqrt(lam)) equals T * c_V(C1)
    cell = CellDomain("cos")
    lam, C1 = np.pi**2, slope_constant(1.0, 1.0)
    a = solve_cell(cell, GRID, C1).c_V
    b = solve_cell(cell, GRID, C1 / np.sqrt(lam)).c_V
    assert predicted_extra(lam, 1.0, 1e-3, 1e-3, b) == pytest.approx(1.0 * 1e-3 * a, rel=1e-10)
