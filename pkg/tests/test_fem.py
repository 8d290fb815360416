from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from hadamard_lab.errors import FactorizationFailure, SingularElement
from hadamard_lab.fem import (DiscreteField, DofMap, Factorization, assemble, boundary_integral,
                              element_matrices, recover_boundary_flux, sliver_integral, solve_poisson)
from hadamard_lab.geometry import BoundaryProfile, make_perturbation, sigma_field
from hadamard_lab.hadamard import solve_domain
from hadamard_lab.mesh import ReferenceGrid, boundary_quadrature, build_mapped_mesh

from conftest import loglog_slope, square, strip


@pytest.fixture(scope="module")
def strip_mode():
    s = solve_domain(strip(), ReferenceGrid(16, 64, 1.0), 1)
    return s.pairs[0]


@pytest.fixture(scope="module")
def square_solve():
    return solve_domain(square(), ReferenceGrid(32, 32, 1.0), 3)


def test_reference_triangle_element_matrices():
    mesh = SimpleNamespace(nodes=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                           triangles=np.array([[0, 1, 2]]))
    ke, me = element_matrices(mesh)
    assert np.allclose(ke[0], 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)
    assert np.allclose(me[0], (np.ones((3, 3)) + np.eye(3)) / 24, atol=1e-15)


def test_degenerate_element_rejected():
    mesh = SimpleNamespace(nodes=np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
                           triangles=np.array([[0, 1, 2]]))
    with pytest.raises(SingularElement):
        element_matrices(mesh)


def test_assembled_matrices_are_symmetric_positive_definite():
    mesh = build_mapped_mesh(strip(bottom=BoundaryProfile.smooth_bump(0.1, 0.5, 0.2)), ReferenceGrid(8, 8))
    dofs = DofMap.build(mesh)
    K, M = assemble(mesh, dofs)
    for A in (K, M):
        A = A.toarray()
        assert np.array_equal(A, A.T)
        assert np.linalg.eigvalsh(A).min() > 0


def test_full_mass_integrates_constants_to_area():
    h = BoundaryProfile.smooth_bump(0.2, 0.5, 0.2)
    mesh = build_mapped_mesh(strip(bottom=h), ReferenceGrid(16, 8))
    one = DiscreteField.from_nodal(mesh, np.ones(mesh.n_nodes))
    assert one.l2_norm_sq() == pytest.approx(mesh.areas().sum(), rel=1e-14)
    assert one.energy() == pytest.approx(0.0, abs=1e-20)


def test_constants_in_kernel_of_periodic_full_stiffness():
    mesh = build_mapped_mesh(strip(bottom=BoundaryProfile.oscillatory(0.05, 1 / 4)), ReferenceGrid(16, 8))
    full = DofMap.full(mesh)
    K, _ = assemble(mesh, full)
    assert np.max(np.abs(K @ np.ones(full.n_dofs))) < 1e-12


def test_poisson_zero_rhs_and_round_trip(rng):
    mesh = build_mapped_mesh(square(), ReferenceGrid(8, 8, 1.0))
    dofs = DofMap.build(mesh)
    K, _ = assemble(mesh, dofs)
    assert np.all(solve_poisson(K, np.zeros(dofs.n_dofs)) == 0)
    v = rng.standard_normal(dofs.n_dofs)
    assert np.allclose(solve_poisson(K, K @ v), v, atol=1e-12)


def test_factorization_rejects_indefinite():
    with pytest.raises(FactorizationFailure):
        Factorization(sp.diags([1.0, -1.0, 2.0]))


def test_poisson_unit_load_center_matches_series():
    # u(1/2, 1/2) for -Lap u = 1 on the unit square with u = 0 on the boundary
    k = np.arange(1, 400, 2)
    m, n = np.meshgrid(k, k)
    sign = (-1.0) ** ((m + n) // 2 - 1)
    oracle = float(np.sum(16 * sign / (np.pi**4 * m * n * (m**2 + n**2))))
    assert oracle == pytest.approx(0.07367, abs=1e-5)
    mesh = build_mapped_mesh(square(), ReferenceGrid(64, 64, 1.0))
    dofs = DofMap.build(mesh)
    K, _ = assemble(mesh, dofs)
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.triangles.ravel(), np.repeat(mesh.areas() / 3, 3))
    u = solve_poisson(K, dofs.restrict(load), mesh, dofs)
    assert u.evaluate([[0.5, 0.5]])[0] == pytest.approx(oracle, rel=5e-4)


def test_flux_of_linear_function_is_exact():
    mesh = build_mapped_mesh(strip(), ReferenceGrid(8, 8, 2.0))
    u = DiscreteField.from_nodal(mesh, mesh.nodes[:, 1])
    q = recover_boundary_flux(u, 0.0)
    assert np.allclose(q.nodal, -1.0, atol=1e-12)
    assert np.allclose(q.values, -1.0, atol=1e-12)


def test_flux_of_zero_field_is_zero():
    mesh = build_mapped_mesh(strip(), ReferenceGrid(8, 8))
    q = recover_boundary_flux(DiscreteField.from_nodal(mesh, np.zeros(mesh.n_nodes)), 0.0)
    assert np.all(q.nodal == 0)


def test_strip_ground_state_flux(strip_mode):
    assert strip_mode.lam == pytest.approx(np.pi**2, rel=1e-3)
    q = recover_boundary_flux(strip_mode.phi, strip_mode.lam)
    assert np.allclose(q.values, -np.sqrt(2) * np.pi, rtol=2e-3)


def test_square_mode_flux_matches_closed_form(square_solve):
    mesh = square_solve.mesh
    # the mesh splits the double eigenvalue slightly; use the span of both discrete modes
    members = square_solve.pairs[1:3]
    target = DiscreteField.from_nodal(mesh, 2 * np.sin(np.pi * mesh.nodes[:, 0])
                                      * np.sin(2 * np.pi * mesh.nodes[:, 1]), square_solve.dofs)
    quad = boundary_quadrature(mesh)
    q = 0.0
    for p in members:
        q = q + target.l2_inner(p.phi) * recover_boundary_flux(p.phi, p.lam, quad).values
    exact = 16 * np.pi**2 * np.sin(np.pi * quad.nodes) ** 2
    assert np.max(np.abs(q**2 - exact)) < 0.02 * exact.max()


def test_boundary_integrals_on_square_modes(square_solve):
    mesh = square_solve.mesh
    pair = make_perturbation(square(), "smooth", 0.01, shape=BoundaryProfile.uniform_shift(1.0))
    quad = boundary_quadrature(mesh, pair.h1)
    sig = sigma_field(pair, quad.nodes, quad.weights)
    g1 = square_solve.group_of(1).members[0]
    q1 = recover_boundary_flux(g1.phi, g1.lam, quad)
    # sigma = d, |q|^2 = 4 pi^2 sin^2(pi x)  ->  2 pi^2 d, up to O(h^2) on the 32x32 mesh
    assert boundary_integral(q1, q1, sig) == pytest.approx(2 * np.pi**2 * 0.01, rel=1.5e-2)
    assert boundary_integral(q1, q1, sig, "minus") == 0.0
    members = square_solve.pairs[1:3]
    qa, qb = (recover_boundary_flux(p.phi, p.lam, quad) for p in members)
    assert boundary_integral(qa, qb, sig) == pytest.approx(boundary_integral(qb, qa, sig), rel=1e-14)


def test_sliver_uniform_shift_matches_analytic(strip_mode):
    # Omega_1 grows below by d: int_{-d}^0 2 pi^2 cos^2(pi y) dy ~ 2 pi^2 d
    out = []
    ds = np.array([4e-3, 2e-3, 1e-3])
    for d in ds:
        ref = strip(bottom=BoundaryProfile.uniform_shift(d))
        pair = make_perturbation(ref, "smooth", d, shape=BoundaryProfile.uniform_shift(-1.0))
        s = solve_domain(ref, ReferenceGrid(16, 64, 1.0), 1)
        phi = s.pairs[0].phi
        g = sliver_integral(pair, phi, phi, "1minus2")
        p = sliver_integral(pair, phi, phi, "1minus2", "product")
        assert g == pytest.approx(2 * np.pi**2 * d, rel=2e-2)
        assert sliver_integral(pair, phi, phi, "2minus1") == 0.0
        out.append(p)
    assert loglog_slope(ds, out) == pytest.approx(3.0, abs=0.05)


def test_sliver_oscillatory_mean(strip_mode):
    d = 1e-4
    pair = make_perturbation(strip(), "c1alpha(0.5)", d)
    phi = strip_mode.phi
    g = sliver_integral(pair, phi, phi, "1minus2")
    assert sliver_integral(pair, phi, phi, "2minus1") == 0.0
    # eta has mean 1/2: 2 pi^2 d * 1/2
    assert g == pytest.approx(np.pi**2 * d, rel=2e-2)


def test_sliver_matches_boundary_form_for_smooth_bump():
    base = strip()
    s = solve_domain(base, ReferenceGrid(64, 64, 1.0), 1)
    phi, lam = s.pairs[0].phi, s.pairs[0].lam
    d = 1e-3
    pair = make_perturbation(base, "smooth", d, shape=BoundaryProfile.smooth_bump(1.0, 0.5, 0.15))
    quad = boundary_quadrature(s.mesh, pair.h1)
    sig = sigma_field(pair, quad.nodes, quad.weights)
    q = recover_boundary_flux(phi, lam, quad)
    bdry = boundary_integral(q, q, sig, "minus")
    # the bump raises the bottom, so the sliver is Omega_1 minus Omega_2 and sigma = -sigma_minus
    assert bdry > 0
    assert sliver_integral(pair, phi, phi, "2minus1") == 0.0
    assert sliver_integral(pair, phi, phi, "1minus2") == pytest.approx(bdry, rel=2e-2)


def test_sliver_is_symmetric_in_fields(square_solve):
    pair = make_perturbation(square(), "smooth", 1e-3, shape=BoundaryProfile.smooth_bump(1.0, 0.4, 0.2))
    a = square_solve.pairs[0].phi
    b = square_solve.pairs[1].phi
    region = "1minus2"
    assert sliver_integral(pair, a, b, region) != 0.0
    assert sliver_integral(pair, a, b, region) == pytest.approx(sliver_integral(pair, b, a, region), rel=1e-13)
