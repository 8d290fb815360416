"""Discrete instance of the abstract two-space framework.

``H_j`` is the P1 space of ``Omega_j`` with zero boundary values, embedded in the
space of an ambient domain ``D`` by extension with zero; ``S_j`` are the
energy-orthogonal projectors onto ``H_j``.

When one domain contains the other with a strictly positive gap, both spaces are
coordinate subspaces of one layered mesh whose interface row follows the inner
bottom, so the discrete framework holds exactly.  Otherwise separate meshes
are used and fields are transferred by locate-and-interpolate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .eigen import DEFAULT_SEED, EigenPair, cluster, dense_sym_pencil_eig, smallest_eigenpairs
from .errors import CountMismatch
from .fem import DiscreteField, DofMap, Factorization, assemble, sliver_integral
from .geometry import BoundaryProfile, DomainPair, DomainSpec, SideCondition
from .mesh import (MappedMesh, ReferenceGrid, build_layered_mesh, build_mapped_mesh)

# 3-point interior rule on triangles (exact for quadratics)
_TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


def _triangle_rule(mesh: MappedMesh):
    p = mesh.nodes[mesh.triangles]  # (t, 3, 2)
    pts = np.einsum("qk,tkc->tqc", _TRI_BARY, p).reshape(-1, 2)
    w = np.repeat(mesh.areas() / 3.0, 3)
    return pts, w


@dataclass(eq=False)
class _Space:
    mesh: MappedMesh
    dofs: DofMap
    K: object
    M: object
    full: DofMap
    Kf: object
    Mf: object
    _fac: Optional[Factorization] = None

    @property
    def factor(self) -> Factorization:
        if self._fac is None:
            self._fac = Factorization(self.K)
        return self._fac

    def rows(self, full_vec) -> np.ndarray:
        """Entries of a full-dof vector at this space's dofs."""
        out = np.zeros(self.dofs.n_dofs)
        m = (self.dofs.node_to_dof >= 0) & ~self.dofs.slave
        out[self.dofs.node_to_dof[m]] = np.asarray(full_vec)[self.full.node_to_dof[m]]
        return out

    def full_vector(self, f: DiscreteField) -> np.ndarray:
        return self.full.restrict(f.nodal)


def _space(mesh: MappedMesh, dofs: DofMap) -> _Space:
    K, M = assemble(mesh, dofs)
    full = DofMap.full(mesh)
    Kf, Mf = assemble(mesh, full)
    return _Space(mesh, dofs, K, M, full, Kf, Mf)


def _subspace_dofs(mesh: MappedMesh, first_free_row: int) -> DofMap:
    """Dirichlet dof map that also eliminates every node at or below ``first_free_row - 1``."""
    base = DofMap.build(mesh)
    row = np.arange(mesh.n_nodes) // (mesh.nx + 1)
    keep = (base.node_to_dof >= 0) & (row >= first_free_row)
    free = keep & ~base.slave
    ntd = np.full(mesh.n_nodes, -1, dtype=np.int64)
    ntd[free] = np.arange(int(free.sum()))
    if mesh.periodic:
        left, right = mesh.periodic_pairs[:, 0], mesh.periodic_pairs[:, 1]
        ntd[right] = ntd[left]
    ntd.setflags(write=False)
    return DofMap(ntd, base.slave, int(free.sum()))


@dataclass(eq=False)
class ProbeSpaces:
    """Discrete spaces ``H_1``, ``H_2`` inside ``H(D)``."""

    pair: DomainPair
    nested: bool
    D: _Space
    spaces: dict  # j -> _Space

    # construction ---------------------------------------------------------
    @classmethod
    def build(cls, pair: DomainPair, grid: ReferenceGrid, *, n_layer: int = 4,
              margin: Optional[float] = None) -> "ProbeSpaces":
        x = pair.sample_points(4096)
        gap = pair.h2(x) - pair.h1(x)
        if np.all(gap == 0.0):
            mesh = build_mapped_mesh(pair.reference, grid)
            sp = _space(mesh, DofMap.build(mesh))
            return cls(pair, True, sp, {1: sp, 2: sp})
        if np.all(gap > 0.0) or np.all(gap < 0.0):
            outer, inner = (1, 2) if gap[0] > 0 else (2, 1)
            outer_spec = pair.reference if outer == 1 else pair.perturbed
            interface = pair.h2 if inner == 2 else pair.h1
            mesh = build_layered_mesh(outer_spec, interface, grid, n_layer)
            so = _space(mesh, DofMap.build(mesh))
            si = _space(mesh, _subspace_dofs(mesh, n_layer + 1))
            return cls(pair, True, so, {outer: so, inner: si})
        # general position: ambient box plus separate meshes
        lo = float(min(pair.h1(x).min(), pair.h2(x).min()))
        margin = 0.05 * pair.R if margin is None else margin
        box = DomainSpec(pair.T, pair.R, BoundaryProfile.uniform_shift(margin - lo),
                         pair.reference.side_condition)
        mD = build_mapped_mesh(box, grid)
        m1 = build_mapped_mesh(pair.reference, grid)
        m2 = build_mapped_mesh(pair.perturbed, grid)
        return cls(pair, False, _space(mD, DofMap.build(mD)),
                   {1: _space(m1, DofMap.build(m1)), 2: _space(m2, DofMap.build(m2))})

    # fields ----------------------------------------------------------------
    def interpolate(self, func: Callable, where: str = "D") -> DiscreteField:
        sp = self.D if where == "D" else self.spaces[int(where)]
        p = sp.mesh.nodes
        return DiscreteField(sp.mesh, sp.dofs, sp.dofs.restrict(func(p[:, 0], p[:, 1])))

    def _transfer_full(self, f: DiscreteField, sp: _Space) -> np.ndarray:
        """Full-dof vector of ``f`` on the mesh of ``sp`` (nodal interpolation)."""
        if f.mesh is sp.mesh:
            return sp.full.restrict(f.nodal)
        return sp.full.restrict(f.evaluate(sp.mesh.nodes))

    def project(self, u: DiscreteField, j: int) -> DiscreteField:
        """``S_j u``: energy projection onto ``H_j``."""
        sp = self.spaces[j]
        rhs = sp.rows(sp.Kf @ self._transfer_full(u, sp))
        return DiscreteField(sp.mesh, sp.dofs, sp.factor.solve(rhs))

    def h1_sq(self, u: DiscreteField) -> float:
        return u.energy()

    def l2_sq_D(self, terms: Sequence[tuple]) -> float:
        """``int_D (sum c_i f_i)^2`` with fields extended by zero."""
        if self.nested and all(f.mesh is self.D.mesh for _, f in terms):
            v = sum(c * self.D.full.restrict(f.nodal) for c, f in terms)
            return float(v @ (self.D.Mf @ v))
        pts, w = _triangle_rule(self.D.mesh)
        v = sum(c * f.evaluate(pts) for c, f in terms)
        return float(np.sum(w * v * v))

    def on_space(self, terms: Sequence[tuple], j: int, gradient: bool = False) -> float:
        """``int_{Omega_j}`` of the squared combination (value or gradient)."""
        sp = self.spaces[j]
        if self.nested and all(f.mesh is sp.mesh for _, f in terms):
            inside = self._inside_mask(j)
            area = sp.mesh.areas()
            if gradient:
                g = sum(c * f.triangle_gradients() for c, f in terms)
                return float(np.sum(area[inside] * np.sum(g[inside] ** 2, axis=1)))
            from .fem import element_matrices
            _, me = element_matrices(sp.mesh)
            u = sum(c * f.nodal for c, f in terms)[sp.mesh.triangles]
            return float(np.einsum("ti,tij,tj->", u[inside], me[inside], u[inside]))
        pts, w = _triangle_rule(sp.mesh)
        if gradient:
            g = sum(c * f.gradient(pts) for c, f in terms)
            return float(np.sum(w * np.sum(g * g, axis=1)))
        v = sum(c * f.evaluate(pts) for c, f in terms)
        return float(np.sum(w * v * v))

    def _inside_mask(self, j: int) -> np.ndarray:
        """Triangles of the shared mesh lying in ``Omega_j``."""
        sp = self.spaces[j]
        if sp is self.D:
            return np.ones(len(sp.mesh.triangles), dtype=bool)
        n_cells = sp.mesh.nx
        first_row = int(np.min(np.nonzero(sp.dofs.node_to_dof >= 0)[0]) // (sp.mesh.nx + 1)) - 1
        tri_row = np.arange(len(sp.mesh.triangles)) // (2 * n_cells)
        return tri_row >= first_row

    # eigenpairs --------------------------------------------------------------
    def eigenpairs(self, j: int, count: int, seed: int = DEFAULT_SEED) -> list[EigenPair]:
        sp = self.spaces[j]
        return smallest_eigenpairs(sp.K, sp.M, count, factor=sp.factor, mesh=sp.mesh,
                                   dofs=sp.dofs, seed=seed)

    def solve_R(self, phi: DiscreteField, lam: float) -> DiscreteField:
        """``R_phi`` in ``H_2``: ``<R, w> = lam (phi, w)`` for all ``w`` in ``H_2``."""
        sp = self.spaces[2]
        rhs = sp.rows(sp.Mf @ self._transfer_full(phi, sp)) * lam
        return DiscreteField(sp.mesh, sp.dofs, sp.factor.solve(rhs))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def project_onto(spaces: ProbeSpaces, u: DiscreteField, j: int) -> DiscreteField:
    return spaces.project(u, j)


def sample_fields(spaces: ProbeSpaces, count: int = 12, seed: int = DEFAULT_SEED) -> list:
    """Smooth random members of ``H(D)`` with unit energy (fixed seed)."""
    rng = np.random.default_rng(seed)
    mesh = spaces.D.mesh
    T, R = spaces.pair.T, spaces.pair.R
    periodic = spaces.pair.reference.side_condition is SideCondition.PERIODIC
    out = []
    for _ in range(count):
        a = rng.standard_normal((3, 3))
        ph = rng.uniform(0.0, 2 * np.pi, 3)

        def u(x, y, a=a, ph=ph):
            yb = mesh.bottom(x)
            s = (y - yb) / (R - yb)
            val = np.zeros_like(x)
            for k in range(3):
                cx = np.cos(2 * np.pi * k * x / T + ph[k]) if periodic else np.sin((k + 1) * np.pi * x / T)
                for l in range(3):
                    val += a[k, l] * cx * np.sin((l + 1) * np.pi * s)
            return val

        f = spaces.interpolate(u)
        nrm = np.sqrt(f.energy())
        out.append(DiscreteField(f.mesh, f.dofs, f.values / nrm))
    return out


def epsilon_hat(spaces: ProbeSpaces, samples: Sequence[DiscreteField]) -> float:
    """``max |(S_1 - S_2) u|^2 / ||u||^2`` over the samples."""
    if len(samples) < 10:
        raise ValueError("at least 10 sample fields are required")
    best = 0.0
    for u in samples:
        a = spaces.project(u, 1)
        b = spaces.project(u, 2)
        best = max(best, spaces.l2_sq_D([(1.0, a), (-1.0, b)]) / u.energy())
    return best


@dataclass(eq=False)
class PsiResult:
    psi_l2_sq: float      # |Psi|^2 over Omega_2
    psi_h1_sq: float      # int_{Omega_2} |grad Psi|^2
    R: DiscreteField
    residual: float       # max |<Psi,w> - <phi,w> + lam (phi,w)| over test w


def psi_phi(spaces: ProbeSpaces, phi: DiscreteField, lam: float, *, n_test: int = 5,
            seed: int = DEFAULT_SEED) -> PsiResult:
    """``Psi_phi = phi - R_phi`` measured on ``Omega_2``."""
    R = spaces.solve_R(phi, lam)
    terms = [(1.0, phi), (-1.0, R)]
    l2 = spaces.on_space(terms, 2)
    h1 = spaces.on_space(terms, 2, gradient=True)
    sp = spaces.spaces[2]
    rng = np.random.default_rng(seed)
    pf = spaces._transfer_full(phi, sp)
    rf = sp.full.restrict(R.nodal)
    worst = 0.0
    for _ in range(n_test):
        w = rng.standard_normal(sp.dofs.n_dofs)
        w /= np.sqrt(w @ (sp.K @ w))
        wf = sp.full.restrict(sp.dofs.extend(w))
        lhs = (pf - rf) @ (sp.Kf @ wf)
        rhs = pf @ (sp.Kf @ wf) - lam * (pf @ (sp.Mf @ wf))
        worst = max(worst, abs(lhs - rhs))
    return PsiResult(l2, h1, R, float(worst))


def _h1_normalized(pairs: Sequence[EigenPair]) -> list:
    out = []
    for p in pairs:
        f = p.phi
        out.append(DiscreteField(f.mesh, f.dofs, f.values / np.sqrt(p.lam)))
    return out


def rho_hat(spaces: ProbeSpaces, group: Sequence[EigenPair], eps: float) -> dict:
    """``max |T phi|^2 + |Psi|^2 + eps ||Psi||^2`` over the energy-normalized group basis."""
    best = 0.0
    parts = {}
    for p, phi in zip(group, _h1_normalized(group)):
        s2 = spaces.project(phi, 2)
        t = spaces.l2_sq_D([(1.0, phi), (-1.0, s2)])
        ps = psi_phi(spaces, phi, p.lam)
        val = t + ps.psi_l2_sq + eps * ps.psi_h1_sq
        if val >= best:
            best = val
            parts = {"T_phi_sq": t, "psi_l2_sq": ps.psi_l2_sq, "psi_h1_sq": ps.psi_h1_sq,
                     "psi_residual": ps.residual}
    return {"rho_hat": best, **parts}


def tau_k(spaces: ProbeSpaces, group: Sequence[EigenPair], mu: Sequence[float]) -> dict:
    """Reduced sliver pencil ``tau`` and the residuals ``|1/mu - 1/lam - tau|``."""
    lam = float(np.mean([p.lam for p in group]))
    phis = _h1_normalized(group)
    Rs = [spaces.solve_R(f, p.lam) for f, p in zip(phis, group)]
    J = len(group)
    A = np.zeros((J, J))
    B = np.zeros((J, J))
    pair = spaces.pair
    for i in range(J):
        for j in range(i, J):
            a = sliver_integral(pair, Rs[i], Rs[j], "2minus1")
            b = sliver_integral(pair, phis[i], phis[j], "1minus2")
            A[i, j] = A[j, i] = (a - b) / lam
            B[i, j] = B[j, i] = lam * phis[i].l2_inner(phis[j])
    tau, _ = dense_sym_pencil_eig(A, B)
    mu = np.sort(np.asarray(mu, dtype=float))
    if mu.size != J:
        raise CountMismatch(f"{mu.size} perturbed eigenvalues for a group of {J}")
    resid = np.abs(1.0 / mu - 1.0 / lam - tau)
    return {"tau": tau, "residual": resid, "A": A, "B": B}


def trace_checks(spaces: ProbeSpaces, phi: DiscreteField, *, per_cell: int = 4) -> dict:
    """``int_{Gamma_12} phi^2 dS`` and ``int_{Omega_1 minus Omega_2} |grad phi|^2``.

    ``phi`` should be energy-normalized on ``Omega_1``.
    """
    pair = spaces.pair
    mesh = phi.mesh
    n = mesh.nx * per_cell
    g, w = np.polynomial.legendre.leggauss(3)
    edges = np.linspace(0.0, pair.T, n + 1)
    a, b = edges[:-1], edges[1:]
    x = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * g[None, :]).ravel()
    wx = (0.5 * (b - a)[:, None] * w[None, :]).ravel()
    h1, h2 = pair.h1(x), pair.h2(x)
    y = np.maximum(h1, h2)
    slope = np.where(h1 >= h2, pair.h1.slope(x), pair.h2.slope(x))
    v = phi.evaluate(np.stack([x, y], axis=1))
    gamma = float(np.sum(wx * np.sqrt(1.0 + slope**2) * v * v))
    sliver = sliver_integral(pair, phi, phi, "1minus2")
    return {"trace_gamma12": gamma, "trace_sliver_grad": sliver}


@dataclass
class ProbeReport:
    d: float
    eps_hat: float
    rho_hat: float
    trace_gamma12: float
    trace_sliver_grad: float
    tau: list
    tau_residual: list
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"probe_eps_hat": self.eps_hat, "probe_rho_hat": self.rho_hat,
               "probe_trace_gamma12": self.trace_gamma12,
               "probe_trace_sliver_grad": self.trace_sliver_grad}
        for k, (t, r) in enumerate(zip(self.tau, self.tau_residual), start=1):
            row[f"probe_tau_{k}"] = t
            row[f"probe_tau_residual_{k}"] = r
        return row


def run_probe(pair: DomainPair, grid: ReferenceGrid, m: int = 1, *, n_layer: int = 4,
              n_samples: int = 12, seed: int = DEFAULT_SEED, cluster_tol: float = 1e-6) -> ProbeReport:
    """All probe quantities for one domain pair."""
    spaces = ProbeSpaces.build(pair, grid, n_layer=n_layer)
    count = m + 2
    pairs1 = spaces.eigenpairs(1, count, seed)
    sp1 = spaces.spaces[1]
    groups = cluster(pairs1, cluster_tol, sp1.M)
    g = next(gr for gr in groups if gr.first_index <= m - 1 < gr.first_index + gr.multiplicity)
    if g.first_index + g.multiplicity >= count:
        raise CountMismatch("eigengroup touches the end of the computed spectrum")
    pairs2 = spaces.eigenpairs(2, count, seed)
    mu = [p.lam for p in pairs2[g.first_index:g.first_index + g.multiplicity]]
    samples = sample_fields(spaces, n_samples, seed)
    eps = epsilon_hat(spaces, samples)
    rho = rho_hat(spaces, g.members, eps)
    tau = tau_k(spaces, g.members, mu)
    phi0 = _h1_normalized(g.members[:1])[0]
    tr = trace_checks(spaces, phi0)
    extra = {k: v for k, v in rho.items() if k != "rho_hat"}
    extra.update({"lam": g.mean, "mu": mu, "nested": spaces.nested})
    return ProbeReport(pair.d, eps, rho["rho_hat"], tr["trace_gamma12"], tr["trace_sliver_grad"],
                       [float(t) for t in tau["tau"]], [float(r) for r in tau["residual"]], extra)
