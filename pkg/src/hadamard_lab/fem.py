"""P1 finite elements on mapped meshes.

Stiffness/mass assembly, a sparse direct solver, discrete fields with
locate-and-interpolate evaluation, variational boundary flux recovery and the
boundary and sliver integrals used by the first-order eigenvalue formula.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import FactorizationFailure, NodeMismatch, SingularElement
from .geometry import BoundaryProfile, SideCondition, SigmaField
from .mesh import BOTTOM, LEFT, RIGHT, TOP, BoundaryQuadrature, MappedMesh

GAUSS4 = np.polynomial.legendre.leggauss(4)
GAUSS2 = np.polynomial.legendre.leggauss(2)


# ---------------------------------------------------------------------------
# degrees of freedom
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    """Node -> dof index; -1 marks an eliminated (Dirichlet) node.

    Periodic slaves (right column) carry the dof of their left-column master;
    ``slave`` flags them.
    """

    node_to_dof: np.ndarray
    slave: np.ndarray
    n_dofs: int

    @classmethod
    def build(cls, mesh: MappedMesh, eliminate: bool = True,
              free_top: bool = False) -> "DofMap":
        """Dof map with Dirichlet bottom, top (unless ``free_top``) and non-periodic sides."""
        tags = mesh.tags
        n = mesh.n_nodes
        slave = np.zeros(n, dtype=bool)
        if mesh.periodic:
            slave[mesh.periodic_pairs[:, 1]] = True
        dirichlet = np.zeros(n, dtype=bool)
        if eliminate:
            dirichlet = tags == BOTTOM
            if not free_top:
                dirichlet |= tags == TOP
            if not mesh.periodic:
                dirichlet |= (tags == LEFT) | (tags == RIGHT)
        free = ~dirichlet & ~slave
        ntd = np.full(n, -1, dtype=np.int64)
        ntd[free] = np.arange(int(free.sum()))
        if mesh.periodic:
            left, right = mesh.periodic_pairs[:, 0], mesh.periodic_pairs[:, 1]
            ntd[right] = ntd[left]
        ntd.setflags(write=False)
        slave.setflags(write=False)
        return cls(ntd, slave, int(free.sum()))

    @classmethod
    def full(cls, mesh: MappedMesh) -> "DofMap":
        """Only periodic identification, no elimination."""
        return cls.build(mesh, eliminate=False)

    def extend(self, u) -> np.ndarray:
        """Nodal values of a dof vector (zero on eliminated nodes)."""
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.node_to_dof.size, dtype=float) if u.ndim == 1 else \
            np.zeros((self.node_to_dof.size,) + u.shape[1:], dtype=float)
        m = self.node_to_dof >= 0
        out[m] = u[self.node_to_dof[m]]
        return out

    def restrict(self, nodal) -> np.ndarray:
        """Dof vector taking the master-node values of a nodal vector."""
        nodal = np.asarray(nodal, dtype=float)
        out = np.zeros(self.n_dofs)
        m = (self.node_to_dof >= 0) & ~self.slave
        out[self.node_to_dof[m]] = nodal[m]
        return out


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def element_geometry(mesh: MappedMesh):
    p = mesh.nodes
    t = mesh.triangles
    p0, p1, p2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    e = np.stack([p2 - p1, p0 - p2, p1 - p0], axis=1)  # edge opposite vertex k
    area = 0.5 * (e[:, 2, 0] * (-e[:, 1, 1]) - e[:, 2, 1] * (-e[:, 1, 0]))
    return e, area


def element_matrices(mesh: MappedMesh):
    e, area = element_geometry(mesh)
    if np.any(area <= 0.0):
        raise SingularElement("zero or negative area triangle")
    ke = np.einsum("tik,tjk->tij", e, e) / (4.0 * area[:, None, None])
    me = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (area / 12.0)[:, None, None]
    return ke, me


def _symmetric_assemble(rows, cols, vals, n) -> sp.csr_matrix:
    keep = (rows >= 0) & (cols >= 0)
    r, c, v = rows[keep], cols[keep], vals[keep]
    lo = np.minimum(r, c)
    hi = np.maximum(r, c)
    # (i,j) and (j,i) both land in the upper triangle, so strict entries are doubled
    upper = sp.coo_matrix((v, (lo, hi)), shape=(n, n)).tocsr()
    upper.sum_duplicates()
    diag = upper.diagonal()
    strict = sp.triu(upper, k=1) * 0.5
    a = strict + strict.T + sp.diags(diag, format="csr")
    a = a.tocsr()
    a.sort_indices()
    return a


def assemble(mesh: MappedMesh, dofs: DofMap):
    """Stiffness and mass matrices over the dofs of ``dofs``."""
    ke, me = element_matrices(mesh)
    d = dofs.node_to_dof[mesh.triangles]
    rows = np.repeat(d, 3, axis=1).ravel()
    cols = np.tile(d, (1, 3)).ravel()
    K = _symmetric_assemble(rows, cols, ke.ravel(), dofs.n_dofs)
    M = _symmetric_assemble(rows, cols, me.ravel(), dofs.n_dofs)
    return K, M


# ---------------------------------------------------------------------------
# linear solver
# ---------------------------------------------------------------------------

class Factorization:
    """Sparse symmetric factorization of a positive definite matrix."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        self.A = A
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            self._lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise FactorizationFailure(str(exc)) from exc
        d = self._lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise FactorizationFailure("matrix is not positive definite after elimination")

    def solve(self, b, refine: int = 1):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        for _ in range(refine):
            x = x + self._lu.solve(b - self.A @ x)
        return x


def solve_poisson(K, rhs, mesh: Optional[MappedMesh] = None, dofs: Optional[DofMap] = None):
    """Solve ``K x = rhs``; returns a :class:`DiscreteField` when a mesh is given."""
    x = Factorization(K).solve(rhs)
    if mesh is None:
        return x
    return DiscreteField(mesh, dofs if dofs is not None else DofMap.build(mesh), x)


# ---------------------------------------------------------------------------
# discrete fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteField:
    mesh: MappedMesh
    dofs: DofMap
    values: np.ndarray

    @classmethod
    def from_nodal(cls, mesh: MappedMesh, nodal, dofs: Optional[DofMap] = None) -> "DiscreteField":
        dofs = DofMap.full(mesh) if dofs is None else dofs
        return cls(mesh, dofs, dofs.restrict(nodal))

    @property
    def nodal(self) -> np.ndarray:
        return self.dofs.extend(self.values)

    def triangle_gradients(self) -> np.ndarray:
        e, area = element_geometry(self.mesh)
        u = self.nodal[self.mesh.triangles]
        rot = np.stack([-e[:, :, 1], e[:, :, 0]], axis=2)
        return np.einsum("tk,tkc->tc", u, rot) / (2.0 * area[:, None])

    def evaluate(self, points) -> np.ndarray:
        """Values at arbitrary points; zero outside the mesh (extension by zero)."""
        tri, bary = self.mesh.locate(points)
        out = np.zeros(tri.size)
        ok = tri >= 0
        u = self.nodal[self.mesh.triangles[tri[ok]]]
        out[ok] = np.sum(u * bary[ok], axis=1)
        return out

    def gradient(self, points) -> np.ndarray:
        tri, _ = self.mesh.locate(points)
        out = np.zeros((tri.size, 2))
        ok = tri >= 0
        out[ok] = self.triangle_gradients()[tri[ok]]
        return out

    def energy(self) -> float:
        """Integral of |grad u|^2 over the mesh."""
        g = self.triangle_gradients()
        _, area = element_geometry(self.mesh)
        return float(np.sum(area * np.sum(g * g, axis=1)))

    def l2_inner(self, other: "DiscreteField") -> float:
        """Exact L2 inner product with a field on the same mesh."""
        if other.mesh is not self.mesh:
            raise NodeMismatch("fields live on different meshes")
        _, me = element_matrices(self.mesh)
        t = self.mesh.triangles
        return float(np.einsum("ti,tij,tj->", self.nodal[t], me, other.nodal[t]))

    def l2_norm_sq(self) -> float:
        return self.l2_inner(self)

    def energy_inner(self, other: "DiscreteField") -> float:
        if other.mesh is not self.mesh:
            raise NodeMismatch("fields live on different meshes")
        _, area = element_geometry(self.mesh)
        return float(np.sum(area * np.sum(self.triangle_gradients() * other.triangle_gradients(), axis=1)))


# ---------------------------------------------------------------------------
# boundary flux
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryFlux:
    nodes: np.ndarray
    values: np.ndarray
    nodal: np.ndarray  # P1 trace on the bottom row, nodes 0..nx


def _boundary_edges(mesh: MappedMesh) -> np.ndarray:
    nx, ny = mesh.nx, mesh.ny
    i = np.arange(nx)
    edges = [np.stack([mesh.node_index(i, 0), mesh.node_index(i + 1, 0)], axis=1),
             np.stack([mesh.node_index(i, ny), mesh.node_index(i + 1, ny)], axis=1)]
    if not mesh.periodic:
        j = np.arange(ny)
        edges.append(np.stack([mesh.node_index(0, j), mesh.node_index(0, j + 1)], axis=1))
        edges.append(np.stack([mesh.node_index(nx, j), mesh.node_index(nx, j + 1)], axis=1))
    return np.concatenate(edges)


_FULL_CACHE: dict = {}


def _full_system(mesh: MappedMesh):
    key = id(mesh)
    hit = _FULL_CACHE.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1:]
    full = DofMap.full(mesh)
    K, M = assemble(mesh, full)
    edges = _boundary_edges(mesh)
    p = mesh.nodes
    length = np.linalg.norm(p[edges[:, 1]] - p[edges[:, 0]], axis=1)
    de = full.node_to_dof[edges]
    bnodes = np.unique(de)
    local = np.full(full.n_dofs, -1, dtype=np.int64)
    local[bnodes] = np.arange(bnodes.size)
    le = local[de]
    rows = np.concatenate([le[:, 0], le[:, 0], le[:, 1], le[:, 1]])
    cols = np.concatenate([le[:, 0], le[:, 1], le[:, 0], le[:, 1]])
    vals = np.concatenate([length / 3.0, length / 6.0, length / 6.0, length / 3.0])
    MG = _symmetric_assemble(rows, cols, vals, bnodes.size)
    fac = Factorization(MG)
    if len(_FULL_CACHE) > 8:
        _FULL_CACHE.clear()
    _FULL_CACHE[key] = (mesh, full, K, M, bnodes, fac)
    return full, K, M, bnodes, fac


def boundary_residual(field: DiscreteField, lam: float) -> np.ndarray:
    """Nodal reactions ``int grad u . grad w - lam int u w`` for every full-map dof."""
    full, K, M, _, _ = _full_system(field.mesh)
    u = full.restrict(field.nodal)
    return K @ u - lam * (M @ u)


def recover_boundary_flux(field: DiscreteField, lam: float,
                          quad: Optional[BoundaryQuadrature] = None) -> BoundaryFlux:
    """Variational normal derivative of ``field`` on the Dirichlet boundary.

    Solves the boundary mass system ``int_G q w dS = int grad u . grad w - lam int u w``
    and returns q on the bottom row and at the bottom quadrature nodes.
    """
    from .mesh import boundary_quadrature

    mesh = field.mesh
    full, K, M, bnodes, fac = _full_system(mesh)
    r = boundary_residual(field, lam)
    q_b = fac.solve(r[bnodes])
    q_full = np.zeros(full.n_dofs)
    q_full[bnodes] = q_b
    bottom = mesh.node_index(np.arange(mesh.nx + 1), 0)
    nodal = q_full[full.node_to_dof[bottom]]
    quad = boundary_quadrature(mesh) if quad is None else quad
    vals = (1.0 - quad.local) * nodal[quad.edge] + quad.local * nodal[quad.edge + 1]
    return BoundaryFlux(quad.nodes, vals, nodal)


def boundary_integral(qi: BoundaryFlux, qj: BoundaryFlux, weight: SigmaField,
                      which: str = "sigma") -> float:
    """``sum_q w_q s(x_q) q_i(x_q) q_j(x_q)`` with s = sigma, sigma_plus or sigma_minus."""
    if qi.nodes.shape != weight.nodes.shape or qj.nodes.shape != weight.nodes.shape \
            or not (np.array_equal(qi.nodes, weight.nodes) and np.array_equal(qj.nodes, weight.nodes)):
        raise NodeMismatch("fluxes and sigma field must share quadrature nodes")
    s = {"sigma": weight.sigma, "plus": weight.sigma_plus, "minus": weight.sigma_minus}[which]
    return float(np.sum(weight.weights * s * qi.values * qj.values))


# ---------------------------------------------------------------------------
# sliver integrals
# ---------------------------------------------------------------------------

def _column_breaks(mesh: MappedMesh, x, lo, hi):
    """Row and diagonal heights of ``mesh`` along verticals at ``x`` near [lo, hi]."""
    rowy = mesh.row_heights(x)
    ny = mesh.ny
    jlo = np.clip(np.sum(rowy <= lo[:, None], axis=1) - 1, 0, ny)
    jhi = np.clip(np.sum(rowy < hi[:, None], axis=1), 0, ny)
    width = int(np.max(jhi - jlo)) + 1 if x.size else 1
    k = np.arange(width)
    jj = np.clip(jlo[:, None] + k[None, :], 0, ny)
    rows = np.take_along_axis(rowy, jj, axis=1)
    dx = (mesh.x[-1] - mesh.x[0]) / mesh.nx
    xr = (x - mesh.x[0]) / dx
    i = np.clip(np.floor(xr).astype(np.int64), 0, mesh.nx - 1)
    t = np.clip(xr - i, 0.0, 1.0)
    jd = np.clip(jj, 0, ny - 1)
    diag = (1.0 - t)[:, None] * mesh.Y[i[:, None], jd] + t[:, None] * mesh.Y[i[:, None] + 1, jd + 1]
    return np.concatenate([rows, diag], axis=1)


def sliver_integral(pair, field_a: DiscreteField, field_b: DiscreteField, region: str,
                    integrand: str = "grad_dot_grad", *, n_sub: int = 4) -> float:
    """Integral over the thin set between the two bottom graphs.

    ``region`` is ``"1minus2"`` (Omega_1 minus Omega_2, where h2 > h1) or
    ``"2minus1"``.  Fields are extended by zero outside their meshes.
    Exact in y on each mesh piece; composite 4-point Gauss in x.
    """
    h1: BoundaryProfile = pair.h1
    h2: BoundaryProfile = pair.h2
    if region in ("1minus2", "omega1_minus_omega2"):
        lower, upper = h1, h2
    elif region in ("2minus1", "omega2_minus_omega1"):
        lower, upper = h2, h1
    else:
        raise ValueError(f"unknown region {region!r}")
    if integrand not in ("grad_dot_grad", "product"):
        raise ValueError(f"unknown integrand {integrand!r}")

    breaks = np.union1d(field_a.mesh.x, field_b.mesh.x)
    a, b = breaks[:-1], breaks[1:]
    gx, gw = GAUSS4
    sub = np.arange(n_sub)
    sa = a[:, None] + (b - a)[:, None] * sub[None, :] / n_sub
    sh = ((b - a) / n_sub)[:, None] * np.ones(n_sub)[None, :]
    sa, sh = sa.ravel(), sh.ravel()
    xq = (sa[:, None] + 0.5 * sh[:, None] * (gx[None, :] + 1.0)).ravel()
    wx = (0.5 * sh[:, None] * gw[None, :]).ravel()

    lo = lower(xq)
    hi = upper(xq)
    live = hi > lo
    if not np.any(live):
        return 0.0
    xq, wx, lo, hi = xq[live], wx[live], lo[live], hi[live]

    pts = [lo[:, None], hi[:, None]]
    for mesh in {id(field_a.mesh): field_a.mesh, id(field_b.mesh): field_b.mesh}.values():
        pts.append(_column_breaks(mesh, xq, lo, hi))
    br = np.concatenate(pts, axis=1)
    br = np.sort(np.clip(br, lo[:, None], hi[:, None]), axis=1)
    y0, y1 = br[:, :-1], br[:, 1:]
    seg = y1 - y0
    gy, gwy = GAUSS2
    total = 0.0
    for g, w in zip(gy, gwy):
        yq = y0 + 0.5 * seg * (g + 1.0)
        P = np.stack([np.broadcast_to(xq[:, None], yq.shape).ravel(), yq.ravel()], axis=1)
        if integrand == "grad_dot_grad":
            va = field_a.gradient(P)
            vb = va if field_b is field_a else field_b.gradient(P)
            f = np.sum(va * vb, axis=1)
        else:
            va = field_a.evaluate(P)
            vb = va if field_b is field_a else field_b.evaluate(P)
            f = va * vb
        f = f.reshape(yq.shape)
        total += float(np.sum(wx[:, None] * 0.5 * w * seg * f))
    return total
