"""Smallest eigenpairs of sparse symmetric pencils and small dense pencils."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import NoConvergence, NotPositiveDefinite
from .fem import DiscreteField, Factorization

DEFAULT_SEED = 20240601


@dataclass(frozen=True, eq=False)
class EigenPair:
    lam: float
    phi: object  # DiscreteField when a mesh is known, else the dof vector
    residual: float

    @property
    def vector(self) -> np.ndarray:
        return self.phi.values if isinstance(self.phi, DiscreteField) else np.asarray(self.phi)


@dataclass(frozen=True, eq=False)
class EigenGroup:
    members: tuple
    mean: float
    gap_below: float
    gap_above: float
    first_index: int = 0

    @property
    def multiplicity(self) -> int:
        return len(self.members)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.lam for p in self.members])

    def basis(self) -> np.ndarray:
        return np.column_stack([p.vector for p in self.members])


@dataclass
class SolverStats:
    restarts: int = 0
    basis_orthogonality: float = 0.0
    orthonormality_defect: float = 0.0
    seed: int = DEFAULT_SEED
    extra: dict = field(default_factory=dict)


def _m_orthonormalize(X, M, drop: float = 1e-11, absolute: bool = False):
    """M-orthonormal basis of span(X) via eigen-decomposed Gram (twice)."""
    for _ in range(2):
        G = X.T @ (M @ X)
        G = 0.5 * (G + G.T)
        s, U = np.linalg.eigh(G)
        if s.size == 0 or s[-1] <= 0.0:
            return X[:, :0]
        keep = s > (drop if absolute else drop * s[-1])
        absolute = False
        U, s = U[:, keep][:, ::-1], s[keep][::-1]
        X = X @ (U / np.sqrt(s))
    return X


def _project_out(W, V, MV):
    for _ in range(2):
        W = W - V @ (MV.T @ W)
    return W


def _fix_signs(X):
    idx = np.argmax(np.abs(X), axis=0)
    s = np.sign(X[idx, np.arange(X.shape[1])])
    s[s == 0] = 1.0
    return X * s


def _rayleigh_ritz(V, K, M):
    A = V.T @ (K @ V)
    B = V.T @ (M @ V)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    w, Y = sla.eigh(A, B)
    return w, V @ Y


EXT = np.longdouble


def _extended_polish(K, M, X, fac, count: int, steps: int = 2):
    """Subspace inverse iteration with extended-precision residuals.

    Corrections are solved in double with the existing factorization; residuals,
    Rayleigh quotients and the returned vectors are carried in long double, which
    removes the rounding floor of ``K x`` on fine or anisotropic meshes.
    """
    KL = K.astype(EXT)
    ML = M.astype(EXT)
    Y = np.asarray(X, dtype=EXT)
    for _ in range(steps):
        B = ML @ Y
        Z = fac.solve(np.asarray(B, dtype=float), refine=0).astype(EXT)
        for _ in range(2):
            Z += fac.solve(np.asarray(B - KL @ Z, dtype=float), refine=0)
        # Rayleigh-Ritz: small pencil solved in double, applied in long double
        G = Z.T @ (ML @ Z)
        C = np.asarray(G, dtype=float)
        s, U = np.linalg.eigh(0.5 * (C + C.T))
        Z = Z @ (U / np.sqrt(s)).astype(EXT)
        A = np.asarray(Z.T @ (KL @ Z), dtype=float)
        _, V = np.linalg.eigh(0.5 * (A + A.T))
        Y = Z @ V.astype(EXT)
        Y /= np.sqrt(np.einsum("ij,ij->j", Y, ML @ Y))
    Y = Y[:, :count]
    KY = KL @ Y
    MY = ML @ Y
    lam = np.einsum("ij,ij->j", Y, KY) / np.einsum("ij,ij->j", Y, MY)
    R = KY - MY * lam
    res = np.sqrt(np.einsum("ij,ij->j", R, R) / np.einsum("ij,ij->j", KY, KY))
    G = Y.T @ MY
    defect = float(np.max(np.abs(G - np.eye(count, dtype=EXT))))
    return np.asarray(lam, dtype=float), Y, np.asarray(res, dtype=float), defect


def smallest_eigenpairs(K, M, count: int, tol: float = 1e-10, *, seed: int = DEFAULT_SEED,
                        block: Optional[int] = None, steps: int = 6, max_restarts: int = 40,
                        factor: Optional[Factorization] = None, mesh=None, dofs=None,
                        stats: Optional[SolverStats] = None) -> list[EigenPair]:
    """The ``count`` smallest eigenpairs of ``K x = lam M x``.

    Block shift-invert Lanczos at shift 0 with full M-reorthogonalization and
    Ritz-vector restarts, followed by an extended-precision inverse-iteration
    polish.  Residuals are ``||K x - lam M x||_2 / ||K x||_2`` of the returned
    (long double) vectors.
    """
    n = K.shape[0]
    if count < 1 or count > n:
        raise ValueError(f"count must be in 1..{n}")
    b = min(n, max(block or 0, count + 4))
    fac = Factorization(K) if factor is None else factor
    rng = np.random.default_rng(seed)
    X = _m_orthonormalize(rng.standard_normal((n, b)), M)
    stats = stats if stats is not None else SolverStats(seed=seed)
    worst_orth = 0.0

    def residuals(lam, Xc):
        KX = K @ Xc
        R = KX - (M @ Xc) * lam
        return np.linalg.norm(R, axis=0) / np.maximum(np.linalg.norm(KX, axis=0), 1e-300)

    prev = np.inf
    for it in range(max_restarts):
        V = X
        MV = M @ V
        Q = X
        for _ in range(steps):
            if V.shape[1] >= n:
                break
            W = fac.solve(M @ Q, refine=0)
            W = W / np.sqrt(np.einsum("ij,ij->j", W, M @ W))
            W = _project_out(W, V, MV)
            # columns are unit before projection, so the drop rule is absolute
            Q = _m_orthonormalize(W, M, drop=1e-26, absolute=True)
            if Q.shape[1] == 0:
                break
            Q = _project_out(Q, V, MV)
            Q = _m_orthonormalize(Q, M)
            V = np.hstack([V, Q])
            MV = np.hstack([MV, M @ Q])
        G = V.T @ MV
        worst_orth = max(worst_orth, float(np.max(np.abs(G - np.eye(G.shape[0])))))
        w, Z = _rayleigh_ritz(V, K, M)
        X = Z[:, :b]
        worst = float(np.max(residuals(w[:count], X[:, :count])))
        stats.restarts = it + 1
        # stop when converged or when double-precision rounding stalls progress
        if worst <= tol or (it >= 1 and worst > 0.5 * prev):
            break
        prev = worst
    lam, Xc, res, defect = _extended_polish(K, M, X, fac, count)
    if not np.all(res <= tol):
        raise NoConvergence(f"residuals {res.max():.3e} above {tol:.1e} after {stats.restarts} restarts")
    Xc = _fix_signs(Xc)
    stats.basis_orthogonality = worst_orth
    stats.orthonormality_defect = defect
    out = []
    for k in range(count):
        v = np.ascontiguousarray(Xc[:, k])
        phi = DiscreteField(mesh, dofs, v) if mesh is not None else v
        out.append(EigenPair(float(lam[k]), phi, float(res[k])))
    return out


def _regroup(members, M):
    if len(members) == 1 or M is None:
        return tuple(members)
    X = np.column_stack([p.vector for p in members])
    ML = M.astype(EXT)
    G = np.asarray(X.T @ (ML @ X), dtype=float)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    X = X @ np.linalg.inv(L).T.astype(X.dtype)
    X = X / np.sqrt(np.einsum("ij,ij->j", X, ML @ X))
    out = []
    for p, v in zip(members, X.T):
        v = np.ascontiguousarray(v)
        phi = DiscreteField(p.phi.mesh, p.phi.dofs, v) if isinstance(p.phi, DiscreteField) else v
        out.append(EigenPair(p.lam, phi, p.residual))
    return tuple(out)


def cluster(pairs: Sequence[EigenPair], cluster_tol: float = 1e-6, M=None) -> list[EigenGroup]:
    """Group eigenpairs whose consecutive relative gaps are within ``cluster_tol``.

    With ``M`` given, each group's basis is re-orthonormalized in the M inner product.
    """
    lams = [p.lam for p in pairs]
    if any(b < a for a, b in zip(lams, lams[1:])):
        raise ValueError("pairs must be sorted ascending")
    runs: list[list[int]] = []
    for k, lam in enumerate(lams):
        if runs and abs(lam - lams[k - 1]) <= cluster_tol * max(abs(lams[k - 1]), 1e-300):
            runs[-1].append(k)
        else:
            runs.append([k])
    groups = []
    for g, idx in enumerate(runs):
        vals = np.array([lams[i] for i in idx])
        below = vals[0] - lams[runs[g - 1][-1]] if g > 0 else np.inf
        above = lams[runs[g + 1][0]] - vals[-1] if g + 1 < len(runs) else np.inf
        groups.append(EigenGroup(_regroup([pairs[i] for i in idx], M), float(vals.mean()),
                                 float(below), float(above), idx[0]))
    return groups


def jacobi_eigh(C, tol: float = 1e-15, max_sweeps: int = 60):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix."""
    A = np.array(C, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.max(np.abs(A)), 1e-300) if n else 1.0
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def dense_sym_pencil_eig(A, B):
    """Eigenvalues (ascending) and B-orthonormal eigenvectors of ``A v = k B v``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("B is not positive definite") from exc
    Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    C = Li @ A @ Li.T
    w, Y = jacobi_eigh(0.5 * (C + C.T))
    return w, Li.T @ Y
