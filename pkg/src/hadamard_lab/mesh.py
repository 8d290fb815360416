"""Structured triangulations of graph domains by a vertical shear of a reference grid.

Meshes of the reference and perturbed domain built from the same
:class:`ReferenceGrid` have identical connectivity; only node heights move.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateCell
from .geometry import BoundaryProfile, DomainSpec, SideCondition

INTERIOR, BOTTOM, TOP, LEFT, RIGHT = 0, 1, 2, 3, 4
TAG_NAMES = {INTERIOR: "interior", BOTTOM: "bottom", TOP: "top", LEFT: "left", RIGHT: "right"}

GAUSS2 = (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0]))


@dataclass(frozen=True)
class ReferenceGrid:
    nx: int
    ny: int
    grading: float = 2.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("reference grid needs nx >= 4 and ny >= 4")
        if self.grading < 1.0:
            raise ValueError("grading exponent must be >= 1")

    def rows(self, R: float) -> np.ndarray:
        """Reference row heights ``R*(j/ny)**grading``."""
        return R * (np.arange(self.ny + 1) / self.ny) ** self.grading

    def refined(self, factor: int = 2) -> "ReferenceGrid":
        return ReferenceGrid(self.nx * factor, self.ny * factor, self.grading)


@dataclass(frozen=True, eq=False)
class MappedMesh:
    """Structured triangle mesh; node ``(i, j)`` has index ``j*(nx+1) + i``.

    ``Y[i, j]`` is the height of node ``(i, j)``.  Row lines are piecewise
    linear between columns, which is what makes point location O(1) per column.
    """

    spec: DomainSpec
    x: np.ndarray
    Y: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    periodic_pairs: np.ndarray
    bottom: BoundaryProfile

    @property
    def nx(self) -> int:
        return self.x.size - 1

    @property
    def ny(self) -> int:
        return self.Y.shape[1] - 1

    @property
    def nodes(self) -> np.ndarray:
        X = np.broadcast_to(self.x[:, None], self.Y.shape)
        return np.stack([X.T.ravel(), self.Y.T.ravel()], axis=1)

    @property
    def n_nodes(self) -> int:
        return self.Y.size

    @property
    def n_distinct_nodes(self) -> int:
        return self.n_nodes - len(self.periodic_pairs)

    @property
    def periodic(self) -> bool:
        return self.spec.side_condition is SideCondition.PERIODIC

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def areas(self) -> np.ndarray:
        p = self.nodes
        a, b, c = p[self.triangles[:, 0]], p[self.triangles[:, 1]], p[self.triangles[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    # point location ------------------------------------------------------
    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Triangle index and barycentric coordinates of each point.

        Points outside the mesh get triangle index -1.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        tri = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        px, py = pts[:, 0], pts[:, 1]
        nx, ny = self.nx, self.ny
        dx = (self.x[-1] - self.x[0]) / nx
        xr = (px - self.x[0]) / dx
        inside_x = (xr >= -1e-12) & (xr <= nx + 1e-12)
        i = np.clip(np.floor(xr).astype(np.int64), 0, nx - 1)
        t = np.clip(xr - i, 0.0, 1.0)
        chunk = max(1, 4_000_000 // (ny + 1))
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            ii, tt, yy = i[sl], t[sl], py[sl]
            rowy = (1.0 - tt)[:, None] * self.Y[ii] + tt[:, None] * self.Y[ii + 1]
            j = np.sum(rowy <= yy[:, None], axis=1) - 1
            j_top = yy == rowy[:, -1]
            j = np.where(j_top, ny - 1, j)
            ok = inside_x[sl] & (j >= 0) & (j < ny)
            jj = np.clip(j, 0, ny - 1)
            # cell corners: a=(i,j) b=(i+1,j) c=(i+1,j+1) e=(i,j+1); diagonal a-c
            yd = (1.0 - tt) * self.Y[ii, jj] + tt * self.Y[ii + 1, jj + 1]
            upper = yy > yd
            cell = jj * nx + ii
            tri[sl] = np.where(ok, 2 * cell + upper.astype(np.int64), -1)
        valid = tri >= 0
        if np.any(valid):
            p = self.nodes
            v = self.triangles[tri[valid]]
            a, b, c = p[v[:, 0]], p[v[:, 1]], p[v[:, 2]]
            q = pts[valid]
            det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
            l1 = ((q[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (q[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
            l2 = ((b[:, 0] - a[:, 0]) * (q[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (q[:, 0] - a[:, 0])) / det
            bary[valid] = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
        return tri, bary

    def row_heights(self, x) -> np.ndarray:
        """Heights of all row lines at abscissae ``x``, shape (len(x), ny+1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dx = (self.x[-1] - self.x[0]) / self.nx
        xr = (x - self.x[0]) / dx
        i = np.clip(np.floor(xr).astype(np.int64), 0, self.nx - 1)
        t = np.clip(xr - i, 0.0, 1.0)
        return (1.0 - t)[:, None] * self.Y[i] + t[:, None] * self.Y[i + 1]

    # output --------------------------------------------------------------
    def dump(self, path) -> None:
        """Plain-text mesh dump: header, ``x y tag`` node lines, ``i j k`` triangle lines."""
        p = self.nodes
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"nodes {self.n_nodes} triangles {len(self.triangles)}\n")
            for (xv, yv), tg in zip(p, self.tags):
                fh.write(f"{xv:.17g} {yv:.17g} {TAG_NAMES[int(tg)]}\n")
            for a, b, c in self.triangles:
                fh.write(f"{a} {b} {c}\n")


def _connectivity(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    w = nx + 1
    a = j * w + i
    b = a + 1
    c = a + w + 1
    e = a + w
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, c], axis=1)
    tris[1::2] = np.stack([a, c, e], axis=1)
    return tris


def _assemble_mesh(spec: DomainSpec, x: np.ndarray, Y: np.ndarray,
                   bottom: BoundaryProfile) -> MappedMesh:
    nx, ny = x.size - 1, Y.shape[1] - 1
    tris = _connectivity(nx, ny)
    tags = np.zeros((ny + 1, nx + 1), dtype=np.int8)
    tags[:, 0] = LEFT
    tags[:, -1] = RIGHT
    tags[0, :] = BOTTOM
    tags[-1, :] = TOP
    if spec.side_condition is SideCondition.PERIODIC:
        j = np.arange(ny + 1)
        pairs = np.stack([j * (nx + 1), j * (nx + 1) + nx], axis=1)
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    for arr in (x, Y, tris, tags, pairs):
        arr.setflags(write=False)
    mesh = MappedMesh(spec, x, Y, tris, tags.ravel(), pairs, bottom)
    area = mesh.areas()
    if np.any(area <= 0.0):
        raise DegenerateCell(f"{int(np.sum(area <= 0))} mapped triangles have nonpositive area")
    return mesh


def build_mapped_mesh(spec: DomainSpec, grid: ReferenceGrid) -> MappedMesh:
    """Map the reference grid onto ``spec`` by ``(x, y) -> (x, h + y (R - h)/R)``."""
    R = spec.height
    x = np.linspace(0.0, spec.width, grid.nx + 1)
    h = spec.bottom(x)
    yref = grid.rows(R)
    Y = h[:, None] + yref[None, :] * (R - h[:, None]) / R
    Y[:, 0] = h
    Y[:, -1] = R
    return _assemble_mesh(spec, x, Y, spec.bottom)


def build_layered_mesh(spec: DomainSpec, interface: BoundaryProfile, grid: ReferenceGrid,
                       n_layer: int) -> MappedMesh:
    """Mesh of ``spec`` whose row ``n_layer`` runs exactly along ``y = interface(x)``.

    The band between the bottom of ``spec`` and the interface gets ``n_layer``
    uniform rows; above it the reference grid is mapped onto the remaining
    graph domain.  The bottom must lie below the interface everywhere.
    """
    if n_layer < 1:
        raise ValueError("n_layer must be positive")
    R = spec.height
    x = np.linspace(0.0, spec.width, grid.nx + 1)
    lo = spec.bottom(x)
    mid = interface(x)
    if np.any(lo > mid):
        raise ValueError("interface must lie above the bottom boundary")
    s = np.arange(n_layer + 1) / n_layer
    band = lo[:, None] + s[None, :] * (mid - lo)[:, None]
    yref = grid.rows(R)[1:]
    upper = mid[:, None] + yref[None, :] * (R - mid[:, None]) / R
    Y = np.concatenate([band, upper], axis=1)
    Y[:, -1] = R
    # zero-thickness band rows (lo == mid) would create flat triangles
    thin = (mid - lo) <= 0.0
    if np.any(thin):
        raise DegenerateCell("layer has zero thickness somewhere; use a plain mapped mesh")
    return _assemble_mesh(spec, x, Y, spec.bottom)


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Two-point Gauss rule on every bottom edge.

    ``edge`` and ``local`` give the edge index and the position (0..1) along it
    of every node, used to interpolate P1 boundary traces.
    """

    nodes: np.ndarray
    weights: np.ndarray
    edge: np.ndarray
    local: np.ndarray
    midpoints: np.ndarray

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))


def boundary_quadrature(mesh: MappedMesh, profile: Optional[BoundaryProfile] = None) -> BoundaryQuadrature:
    profile = mesh.bottom if profile is None else profile
    xa, xb = mesh.x[:-1], mesh.x[1:]
    half = 0.5 * (xb - xa)
    mid = 0.5 * (xa + xb)
    g, w = GAUSS2
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    arc = np.sqrt(1.0 + profile.slope(nodes) ** 2)
    weights = (half[:, None] * w[None, :]).ravel() * arc
    edge = np.repeat(np.arange(mesh.nx), 2)
    local = np.tile(0.5 * (1.0 + g), mesh.nx)
    return BoundaryQuadrature(nodes, weights, edge, local, mid)
