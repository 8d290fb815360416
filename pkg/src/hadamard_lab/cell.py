"""Boundary-layer cell problem of a rapidly oscillating boundary.

On the periodic cell ``{0 < X < 1, r*eta(X) < Y < L}`` we solve

* the special solution ``V`` (harmonic, zero on the bottom, unit flux at the top),
  whose bottom flux fixes the constant ``c0`` that makes the layer decay;
* the layer ``V0`` (harmonic, ``C1*eta - c0`` on the bottom, zero at the top)
  and its Dirichlet energy ``c_V``.

For a strip of width T and height R the eigenfunction slope at the bottom is
``C1 = sqrt(2/(R T)) * pi / R``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DecayFailure, ZeroFlux
from .fem import DiscreteField, DofMap, Factorization, _full_system, assemble, recover_boundary_flux
from .geometry import WAVEFORMS, BoundaryProfile, DomainSpec, SideCondition, waveform
from .mesh import BOTTOM, TOP, MappedMesh, ReferenceGrid, boundary_quadrature, build_mapped_mesh


def slope_constant(T: float, R: float) -> float:
    """Bottom slope of the L2-normalized first strip mode."""
    return float(np.sqrt(2.0 / (R * T)) * np.pi / R)


@dataclass(frozen=True)
class CellDomain:
    waveform: str = "cos"
    L: float = 6.0
    ratio: float = 1.0  # bottom is ratio*eta(X)

    def __post_init__(self):
        if self.L < 5.0:
            raise ValueError("truncation height L must be at least 5")
        if self.waveform not in WAVEFORMS:
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if self.ratio < 0.0:
            raise ValueError("ratio must be nonnegative")

    @property
    def eta(self):
        return waveform(self.waveform)

    @property
    def bottom(self) -> BoundaryProfile:
        if self.ratio == 0.0:
            return BoundaryProfile.flat()
        return BoundaryProfile.oscillatory(self.ratio, 1.0, self.waveform)

    def spec(self) -> DomainSpec:
        return DomainSpec(1.0, self.L, self.bottom, SideCondition.PERIODIC)

    def mesh(self, grid: ReferenceGrid) -> MappedMesh:
        return build_mapped_mesh(self.spec(), grid)


@dataclass(frozen=True, eq=False)
class SpecialSolution:
    field: DiscreteField
    flux_nodal: np.ndarray  # variational d_nu V on bottom-row nodes
    far_slope: float


@dataclass(frozen=True, eq=False)
class CellSolution:
    V0: DiscreteField
    c0: float
    C1: float
    c_V: float
    q_residual: float
    data: np.ndarray  # bottom Dirichlet data on bottom-row nodes

    def summary(self) -> dict:
        return {"c0": self.c0, "C1": self.C1, "c_V": self.c_V, "q_residual": self.q_residual}


def _bottom_nodes(mesh: MappedMesh) -> np.ndarray:
    return mesh.node_index(np.arange(mesh.nx + 1), 0)


def _bottom_mass(mesh: MappedMesh) -> np.ndarray:
    """Lumped-free P1 boundary mass on the bottom chord polygon, (nx+1)^2 dense-free form."""
    b = _bottom_nodes(mesh)
    p = mesh.nodes[b]
    length = np.linalg.norm(np.diff(p, axis=0), axis=1)
    return length


def _bottom_pairing(mesh: MappedMesh, q, g) -> float:
    """``int_Gamma q g dS`` for P1 traces on the bottom chord polygon."""
    ell = _bottom_mass(mesh)
    qa, qb = q[:-1], q[1:]
    ga, gb = g[:-1], g[1:]
    return float(np.sum(ell * (2 * qa * ga + qa * gb + qb * ga + 2 * qb * gb) / 6.0))


def solve_special_V(cell: CellDomain, grid: ReferenceGrid,
                    mesh: Optional[MappedMesh] = None) -> SpecialSolution:
    """Harmonic ``V``: zero on the bottom, unit upward flux on ``Y = L``, periodic in X."""
    mesh = cell.mesh(grid) if mesh is None else mesh
    dofs = DofMap.build(mesh, free_top=True)
    K, _ = assemble(mesh, dofs)
    top = mesh.node_index(np.arange(mesh.nx), mesh.ny)  # masters only
    dx = np.diff(mesh.x)
    w = 0.5 * (dx + np.roll(dx, 1))  # periodic hat integrals on the top line
    f = np.zeros(dofs.n_dofs)
    np.add.at(f, dofs.node_to_dof[top], w)
    V = DiscreteField(mesh, dofs, Factorization(K).solve(f))
    flux = recover_boundary_flux(V, 0.0)
    # far-field slope: mean of dV/dY over triangles with centroid in [L-1, L]
    g = V.triangle_gradients()
    cy = mesh.nodes[mesh.triangles][:, :, 1].mean(axis=1)
    area = mesh.areas()
    sel = cy >= cell.L - 1.0
    slope = float(np.sum(g[sel, 1] * area[sel]) / np.sum(area[sel]))
    return SpecialSolution(V, flux.nodal, slope)


def compute_c0(special: SpecialSolution, cell: CellDomain, C1: float) -> float:
    """Constant making the layer decay: flux-weighted mean of ``C1*eta`` on the bottom.

    Uses the variational bottom flux of ``V``, for which the discrete layer has
    exactly zero net flux.
    """
    mesh = special.field.mesh
    x = mesh.x
    eta = C1 * cell.eta.eta(x)
    q = special.flux_nodal
    den = _bottom_pairing(mesh, q, np.ones_like(q))
    if not np.isfinite(den) or abs(den) < 1e-14:
        raise ZeroFlux("bottom flux of the special solution vanishes")
    return _bottom_pairing(mesh, q, eta) / den


def solve_V0(cell: CellDomain, c0: float, C1: float, mesh: MappedMesh, *,
             decay_tol: float = 1e-4) -> CellSolution:
    """Harmonic layer with bottom data ``C1*eta - c0`` and zero top data."""
    dofs = DofMap.build(mesh)
    full, Kf, _, _, _ = _full_system(mesh)
    bottom = _bottom_nodes(mesh)
    data = C1 * cell.eta.eta(mesh.x) - c0
    lift = np.zeros(full.n_dofs)
    lift[full.node_to_dof[bottom]] = data
    rhs_full = -(Kf @ lift)
    # interior rows of the full system
    interior = (dofs.node_to_dof >= 0) & ~dofs.slave
    fi = full.node_to_dof[interior]
    di = dofs.node_to_dof[interior]
    rhs = np.zeros(dofs.n_dofs)
    rhs[di] = rhs_full[fi]
    K, _ = assemble(mesh, dofs)
    u = Factorization(K).solve(rhs)
    nodal = dofs.extend(u)
    nodal[bottom] = data
    field = DiscreteField.from_nodal(mesh, nodal)
    c_V = field.energy()
    # far-field constant: mean of V0 over Y in [L-2, L-1]
    tri = mesh.nodes[mesh.triangles]
    cy = tri[:, :, 1].mean(axis=1)
    sel = (cy >= cell.L - 2.0) & (cy <= cell.L - 1.0)
    vals = field.nodal[mesh.triangles].mean(axis=1)
    area = mesh.areas()
    q_res = float(np.sum(vals[sel] * area[sel]) / np.sum(area[sel]))
    scale = max(float(np.max(np.abs(data))), 1e-300)
    if abs(q_res) > decay_tol * scale:
        raise DecayFailure(f"layer does not decay: far-field mean {q_res:.3e}")
    return CellSolution(field, float(c0), float(C1), float(c_V), q_res, data)


def solve_cell(cell: CellDomain, grid: ReferenceGrid, C1: float) -> CellSolution:
    mesh = cell.mesh(grid)
    special = solve_special_V(cell, grid, mesh)
    c0 = compute_c0(special, cell, C1)
    return solve_V0(cell, c0, C1, mesh)


def cell_energy(cell: CellDomain, grid: ReferenceGrid, C1: float = 1.0,
                richardson: bool = True) -> dict:
    """``c_V`` on ``grid`` and its refinement, with the extrapolated value."""
    a = solve_cell(cell, grid, C1)
    if not richardson:
        return {"c_V": a.c_V, "c0": a.c0, "levels": [a.c_V], "solution": a}
    b = solve_cell(cell, grid.refined(2), C1)
    ext = (4.0 * b.c_V - a.c_V) / 3.0
    return {"c_V": ext, "c0": (4.0 * b.c0 - a.c0) / 3.0, "levels": [a.c_V, b.c_V],
            "q_residual": max(abs(a.q_residual), abs(b.q_residual)), "solution": b}


def predicted_extra(lam1: float, T: float, d: float, delta: float, c_V: float) -> float:
    """Predicted non-Hadamard part ``lam1 * T * d**2/delta * c_V`` of the first eigenvalue shift.

    ``c_V`` must be the cell energy for the bottom slope of the
    energy-normalized eigenfunction, ``C1/sqrt(lam1)``; with the slope of the
    L2-normalized eigenfunction divide it by ``lam1`` first (the energy scales
    with the square of the slope).
    """
    if min(T, d, delta) <= 0 or c_V < 0:
        raise ValueError("inputs must be positive")
    return lam1 * T * d * d / delta * c_V
