"""First-order eigenvalue shifts from the reduced boundary pencil.

For an eigengroup ``phi_1..phi_J`` of the reference domain the shifts ``kappa``
solve ``A v = kappa B v`` with

    A_ij = -int_Gamma sigma d_nu(phi_i) d_nu(phi_j) dS,    B_ij = int phi_i phi_j dx.

A positive ``sigma`` (domain grows) lowers the eigenvalues.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .eigen import DEFAULT_SEED, EigenGroup, SolverStats, cluster, dense_sym_pencil_eig, smallest_eigenpairs
from .errors import CountMismatch
from .fem import (BoundaryFlux, DiscreteField, DofMap, Factorization, assemble,
                  boundary_integral, recover_boundary_flux)
from .geometry import DomainPair, DomainSpec, SigmaField, sigma_field
from .mesh import MappedMesh, ReferenceGrid, boundary_quadrature, build_mapped_mesh


@dataclass(frozen=True)
class ReducedPencil:
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class Prediction:
    lam_m: float
    kappa: np.ndarray
    predicted: np.ndarray
    mu: np.ndarray
    remainder: np.ndarray

    @property
    def count(self) -> int:
        return len(self.kappa)


def reduced_pencil(group: EigenGroup, sigma: SigmaField,
                   fluxes: Sequence[BoundaryFlux]) -> ReducedPencil:
    J = group.multiplicity
    if len(fluxes) != J:
        raise CountMismatch(f"{len(fluxes)} fluxes for a group of {J}")
    A = np.zeros((J, J))
    B = np.zeros((J, J))
    for i in range(J):
        for j in range(i, J):
            A[i, j] = A[j, i] = -boundary_integral(fluxes[i], fluxes[j], sigma)
            pi, pj = group.members[i].phi, group.members[j].phi
            B[i, j] = B[j, i] = pi.l2_inner(pj) if isinstance(pi, DiscreteField) \
                else float(np.dot(pi, pj))
    return ReducedPencil(A, B)


def predict(lam_m: float, pencil: ReducedPencil):
    """Shifts ``kappa`` (ascending) and predicted eigenvalues ``lam_m + kappa``."""
    kappa, _ = dense_sym_pencil_eig(pencil.A, pencil.B)
    return kappa, lam_m + kappa


def match_and_remainder(lam_m: float, kappa, mu) -> Prediction:
    """Pair predictions and perturbed eigenvalues by rank; ``r = mu - lam_m - kappa``."""
    kappa = np.sort(np.asarray(kappa, dtype=float))
    mu = np.sort(np.asarray(mu, dtype=float))
    if kappa.size != mu.size:
        raise CountMismatch(f"{kappa.size} predicted shifts but {mu.size} perturbed eigenvalues")
    pred = lam_m + kappa
    return Prediction(float(lam_m), kappa, pred, mu, mu - pred)


# ---------------------------------------------------------------------------
# one mesh level
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DomainSolve:
    mesh: MappedMesh
    dofs: DofMap
    K: object
    M: object
    pairs: list
    groups: list
    factor: Factorization
    stats: SolverStats

    def group_of(self, m: int) -> EigenGroup:
        """The eigengroup containing the ``m``-th eigenvalue (1-based)."""
        for g in self.groups:
            if g.first_index <= m - 1 < g.first_index + g.multiplicity:
                return g
        raise IndexError(f"eigenvalue {m} not computed")


def solve_domain(spec: DomainSpec, grid: ReferenceGrid, count: int, *, tol: float = 1e-10,
                 seed: int = DEFAULT_SEED, cluster_tol: float = 1e-6,
                 mesh: Optional[MappedMesh] = None) -> DomainSolve:
    mesh = build_mapped_mesh(spec, grid) if mesh is None else mesh
    dofs = DofMap.build(mesh)
    K, M = assemble(mesh, dofs)
    fac = Factorization(K)
    stats = SolverStats(seed=seed)
    pairs = smallest_eigenpairs(K, M, count, tol, seed=seed, factor=fac, mesh=mesh,
                                dofs=dofs, stats=stats)
    groups = cluster(pairs, cluster_tol, M)
    return DomainSolve(mesh, dofs, K, M, pairs, groups, fac, stats)


def group_shifts(solve: DomainSolve, members: Sequence, pair: DomainPair):
    """Reduced pencil and ``kappa`` (ascending) of ``members`` for the perturbation ``pair``."""
    quad = boundary_quadrature(solve.mesh, pair.h1)
    sig = sigma_field(pair, quad.nodes, quad.weights)
    fluxes = [recover_boundary_flux(p.phi, p.lam, quad) for p in members]
    group = EigenGroup(tuple(members), float(np.mean([p.lam for p in members])), np.inf, np.inf)
    pencil = reduced_pencil(group, sig, fluxes)
    kappa, _ = predict(group.mean, pencil)
    return pencil, kappa


def richardson(coarse, fine):
    """``(4 fine - coarse)/3`` for factor-2 refinement of an O(h^2) quantity."""
    return (4.0 * np.asarray(fine, dtype=float) - np.asarray(coarse, dtype=float)) / 3.0


def _combine(values):
    return values[0] if len(values) == 1 else richardson(values[0], values[1])


@dataclass(eq=False)
class ReferenceLevels:
    """Reference-domain solves on one or two grids and the located eigengroup."""

    grids: tuple
    solves: tuple
    first: int
    multiplicity: int
    lam: np.ndarray  # extrapolated group eigenvalues

    @property
    def index(self) -> slice:
        return slice(self.first, self.first + self.multiplicity)

    @property
    def lam_m(self) -> float:
        return float(np.mean(self.lam))

    def members(self, level: int) -> tuple:
        s = self.solves[level]
        g = cluster(s.pairs[self.index], np.inf, s.M)
        return g[0].members


def solve_reference(spec: DomainSpec, grids: Sequence[ReferenceGrid], m: int = 1, *,
                    tol: float = 1e-10, seed: int = DEFAULT_SEED, cluster_tol: float = 1e-6,
                    extra: int = 2) -> ReferenceLevels:
    """Solve the reference domain on every grid and locate the group of eigenvalue ``m``.

    Multiplicities are read off the extrapolated spectrum: a fixed-diagonal
    mesh splits continuum multiplets by O(h^2) on each level.
    """
    if not 1 <= len(grids) <= 2:
        raise ValueError("one or two grids expected")
    count = m + extra
    while True:
        solves = tuple(solve_domain(spec, g, count, tol=tol, seed=seed, cluster_tol=cluster_tol)
                       for g in grids)
        lam = _combine([np.array([p.lam for p in s.pairs]) for s in solves])
        # extrapolated members of a mesh-split multiplet may swap order
        lam = np.sort(lam)
        runs = [[0]]
        for k in range(1, lam.size):
            if abs(lam[k] - lam[k - 1]) <= cluster_tol * abs(lam[k - 1]):
                runs[-1].append(k)
            else:
                runs.append([k])
        run = next(r for r in runs if m - 1 in r)
        if run[-1] < lam.size - 1:
            return ReferenceLevels(tuple(grids), solves, run[0], len(run), lam[run[0]:run[-1] + 1])
        count += 2


@dataclass(eq=False)
class PairResult:
    """Two-level (or single-level) evaluation of one domain pair.

    ``remainder`` is extrapolated from per-level remainders
    ``mu_h - eig(Phi^T K Phi + A_h)``, which stay smooth in h even when a
    multiplet is split by the mesh; ``mu`` is reported as
    ``lam_m + kappa + remainder``.  For simple eigenvalues this equals the
    plain extrapolation of the perturbed eigenvalue.
    """

    lam_m: float
    lam: np.ndarray
    kappa: np.ndarray
    mu: np.ndarray
    remainder: np.ndarray
    mu_levels: list
    kappa_levels: list
    pencils: list
    residuals: list
    orthonormality: float
    perturbed: list

    @property
    def multiplicity(self) -> int:
        return len(self.kappa)

    def prediction(self) -> Prediction:
        return Prediction(self.lam_m, self.kappa, self.lam_m + self.kappa, self.mu, self.remainder)


def evaluate_pair(pair: DomainPair, grids: Sequence[ReferenceGrid], m: int = 1, *,
                  reference: Optional[ReferenceLevels] = None, tol: float = 1e-10,
                  seed: int = DEFAULT_SEED, cluster_tol: float = 1e-6) -> PairResult:
    ref = reference if reference is not None else solve_reference(
        pair.reference, grids, m, tol=tol, seed=seed, cluster_tol=cluster_tol)
    J = ref.multiplicity
    idx = ref.index
    kap, rem, mus, pencils, res, pert = [], [], [], [], [], []
    orth = 0.0
    for level, grid in enumerate(ref.grids):
        rs = ref.solves[level]
        members = ref.members(level)
        ps = solve_domain(pair.perturbed, grid, len(rs.pairs), tol=tol, seed=seed,
                          cluster_tol=cluster_tol)
        pencil, kappa = group_shifts(rs, members, pair)
        Phi = np.column_stack([p.vector for p in members])
        Kg = Phi.T @ (rs.K @ Phi)
        qd, _ = dense_sym_pencil_eig(0.5 * (Kg + Kg.T) + pencil.A, pencil.B)
        mu = np.array([p.lam for p in ps.pairs[idx]])
        if mu.size != J:
            raise CountMismatch(f"expected {J} perturbed eigenvalues, found {mu.size}")
        kap.append(kappa)
        rem.append(np.sort(mu) - qd)
        mus.append(mu)
        pencils.append(pencil)
        res.extend(p.residual for p in rs.pairs)
        res.extend(p.residual for p in ps.pairs)
        orth = max(orth, rs.stats.orthonormality_defect, ps.stats.orthonormality_defect)
        pert.append(ps)
    kappa = _combine(kap)
    remainder = _combine(rem)
    lam_m = ref.lam_m
    return PairResult(lam_m, ref.lam, kappa, lam_m + kappa + remainder, remainder, mus, kap,
                      pencils, res, orth, pert)
