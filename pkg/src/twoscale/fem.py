"""P1 assembly on triangles, periodic/pinned DOF folding and linear solvers.

Coefficient arguments accept a constant, a callable evaluated at the
quadrature points (``coeff(xy)`` with ``xy`` of shape ``(M, 3, 2)``), or an
array already sampled at the quadrature points (leading shape ``(M, 3)``).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import IncompatibleRhs, IndefiniteDetected, NotConverged, SolverError
from .mesh import Marker, Mesh2D

# degree-2 exact rule on the reference triangle, weights sum to 1
QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
QUAD_W = np.full(3, 1 / 3)
GAUSS2_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])

DEFAULT_RTOL = 1e-10
DIRECT_LIMIT = 200_000


class Geometry:
    """Per-triangle affine data: areas, P1 gradients and quadrature points."""

    def __init__(self, mesh: Mesh2D):
        p = mesh.vertices[mesh.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.area = 0.5 * det
        # gradient of barycentric lambda_k: rotate the opposite edge
        g = np.empty((len(p), 3, 2))
        for k in range(3):
            a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / det
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / det
        self.grad = g
        self.qpoints = np.einsum("qk,mkd->mqd", QUAD_BARY, p)
        self.mesh = mesh


def geometry(mesh: Mesh2D) -> Geometry:
    return Geometry(mesh)


def _sample(coeff, geo: Geometry, tail: tuple) -> np.ndarray:
    """Broadcast a coefficient to shape ``(M, 3) + tail``."""
    M = len(geo.area)
    if callable(coeff):
        vals = np.asarray(coeff(geo.qpoints), dtype=float)
    else:
        vals = np.asarray(coeff, dtype=float)
    if vals.shape == tail:
        vals = np.broadcast_to(vals, (M, 3) + tail)
    elif vals.shape == (M,) + tail:
        vals = np.broadcast_to(vals[:, None], (M, 3) + tail)
    vals = np.broadcast_to(vals, (M, 3) + tail)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite coefficient values")
    return vals


def _to_csr(mesh: Mesh2D, local: np.ndarray, workers: int = 1) -> sp.csr_matrix:
    """Scatter ``(M, 3, 3)`` element matrices; chunks merge in fixed order."""
    t = mesh.triangles
    n = mesh.n_vertices
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    if workers > 1 and len(t) > 1:
        bounds = np.linspace(0, len(t), workers + 1).astype(int)

        def part(k):
            lo, hi = bounds[k], bounds[k + 1]
            return local[lo:hi].reshape(-1)

        with ThreadPoolExecutor(workers) as ex:
            vals = np.concatenate(list(ex.map(part, range(workers))))
    else:
        vals = local.reshape(-1)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return finalize(A)


def finalize(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def stiffness_local(geo: Geometry, coeff=None) -> np.ndarray:
    if coeff is None:
        coeff = np.eye(2)
    c = np.asarray(coeff, dtype=float) if not callable(coeff) else coeff
    if not callable(c) and c.ndim == 0:
        c = c * np.eye(2)
    K = _sample(c, geo, (2, 2))
    Kbar = np.einsum("q,mqab->mab", QUAD_W, K)
    return np.einsum("mia,mab,mjb,m->mij", geo.grad, Kbar, geo.grad, geo.area)


def assemble_stiffness(mesh: Mesh2D, coeff=None, workers: int = 1) -> sp.csr_matrix:
    """``A_ij = int coeff grad(phi_j) . grad(phi_i)`` for a 2x2 coefficient field."""
    return _to_csr(mesh, stiffness_local(Geometry(mesh), coeff), workers)


def mass_local(geo: Geometry, coeff=1.0) -> np.ndarray:
    c = _sample(coeff, geo, ())
    return np.einsum("q,mq,qi,qj,m->mij", QUAD_W, c, QUAD_BARY, QUAD_BARY, geo.area)


def assemble_mass(mesh: Mesh2D, coeff=1.0, workers: int = 1) -> sp.csr_matrix:
    """Consistent mass matrix ``int coeff phi_j phi_i``."""
    return _to_csr(mesh, mass_local(Geometry(mesh), coeff), workers)


def convection_local(geo: Geometry, vel) -> np.ndarray:
    V = _sample(vel, geo, (2,))
    # entry (i, j) = int phi_j vel . grad(phi_i)
    vg = np.einsum("mqa,mia->mqi", V, geo.grad)
    return np.einsum("q,mqi,qj,m->mij", QUAD_W, vg, QUAD_BARY, geo.area)


def assemble_convection(mesh: Mesh2D, vel, workers: int = 1) -> sp.csr_matrix:
    return _to_csr(mesh, convection_local(Geometry(mesh), vel), workers)


def assemble_load(mesh: Mesh2D, f) -> np.ndarray:
    """``b_i = int f phi_i``."""
    geo = Geometry(mesh)
    vals = _sample(f, geo, ())
    local = np.einsum("q,mq,qi,m->mi", QUAD_W, vals, QUAD_BARY, geo.area)
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.triangles, local)
    return b


def assemble_gradient_load(mesh: Mesh2D, vec) -> np.ndarray:
    """``b_i = int vec . grad(phi_i)`` for a vector field ``vec``."""
    geo = Geometry(mesh)
    V = _sample(vec, geo, (2,))
    Vbar = np.einsum("q,mqa->ma", QUAD_W, V)
    local = np.einsum("ma,mia,m->mi", Vbar, geo.grad, geo.area)
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.triangles, local)
    return b


def boundary_edge_normals(mesh: Mesh2D, marker: Marker | None = None):
    """Edges (as oriented in their triangle) and outward unit normals."""
    sel = np.ones(len(mesh.boundary_edges), dtype=bool) if marker is None else (mesh.boundary_markers == int(marker))
    e = mesh.boundary_edges[sel]
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    # triangles are counterclockwise, so the outward normal is the right turn
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return e, normal, length


def assemble_interface_load(mesh: Mesh2D, g, marker: Marker = Marker.INTERFACE_GAMMA) -> np.ndarray:
    """``v_i = int_Gamma g phi_i`` with two-point Gauss on every marked edge.

    ``g`` is a constant or ``g(xy, normal)`` with ``xy`` of shape ``(E, 2, 2)``
    (two Gauss points per edge) and ``normal`` the outward normal of the mesh
    domain, shape ``(E, 2)``.
    """
    e, normal, length = boundary_edge_normals(mesh, marker)
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    xy = a[:, None, :] + GAUSS2_T[None, :, None] * (b - a)[:, None, :]
    if callable(g):
        vals = np.asarray(g(xy, normal), dtype=float)
    else:
        vals = np.full(xy.shape[:2], float(g))
    vals = np.broadcast_to(vals, xy.shape[:2])
    w = 0.5 * length
    phi = np.stack([1.0 - GAUSS2_T, GAUSS2_T])  # (basis, gauss)
    local = np.einsum("eg,kg,e->ek", vals, phi, w)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, e, local)
    return out


# -- DOF folding ----------------------------------------------------------------

class DofMap:
    """Fold periodic slaves into their root master and drop pinned DOFs."""

    def __init__(self, n: int, pairs=(), pinned=()):
        parent = np.arange(n)

        def root(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for m, s in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
            rm, rs = root(m), root(s)
            if rm != rs:
                # keep the smaller index as master so the map is order independent
                lo, hi = min(rm, rs), max(rm, rs)
                parent[hi] = lo
        roots = np.array([root(i) for i in range(n)], dtype=np.int64)
        pinned_mask = np.zeros(n, dtype=bool)
        pinned_mask[np.asarray(pinned, dtype=np.int64)] = True
        pinned_mask = pinned_mask[roots]
        masters = np.unique(roots[~pinned_mask])
        index = np.full(n, -1, dtype=np.int64)
        lookup = {int(m): k for k, m in enumerate(masters)}
        for i in range(n):
            if not pinned_mask[i]:
                index[i] = lookup[int(roots[i])]
        self.n_full = n
        self.n_free = len(masters)
        self.roots = roots
        self.index = index
        rows = np.nonzero(index >= 0)[0]
        self.P = sp.csr_matrix((np.ones(len(rows)), (rows, index[rows])), shape=(n, self.n_free))

    @classmethod
    def from_mesh(cls, mesh: Mesh2D, pinned=()):
        return cls(mesh.n_vertices, mesh.periodic_pairs, pinned)

    def expand(self, x_free, pinned_value=0.0):
        x = np.asarray(self.P @ x_free, dtype=float)
        if np.ndim(x) == 1:
            x[self.index < 0] = pinned_value
        else:
            x[self.index < 0] = pinned_value
        return x


def reduce(A, b, dofmap: DofMap):
    """Fold slave rows/columns into masters: ``P^T A P`` and ``P^T b``."""
    P = dofmap.P
    Ar = finalize(P.T @ A @ P)
    br = None if b is None else P.T @ b
    return Ar, br


# -- solvers --------------------------------------------------------------------

def _residual_ok(A, x, b, rel_tol):
    r = b - A @ x
    nb = np.linalg.norm(b)
    return np.linalg.norm(r) <= rel_tol * max(nb, np.finfo(float).tiny) or nb == 0.0


def solve_spd(A, b, rel_tol: float = DEFAULT_RTOL, x0=None):
    """Jacobi-preconditioned conjugate gradients."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0.0):
        raise IndefiniteDetected("non-positive diagonal entry")
    Minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = Minv * r
    p = z.copy()
    rz = r @ z
    for _ in range(10 * n):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise IndefiniteDetected("p^T A p <= 0 during CG")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rel_tol * nb:
            # recompute to guard against drift in the recursive residual
            if _residual_ok(A, x, b, rel_tol):
                return x
            r = b - A @ x
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NotConverged(f"CG did not reach rel_tol={rel_tol} in {10 * n} iterations")


def solve_general(A, b, rel_tol: float = DEFAULT_RTOL):
    """Sparse LU below :data:`DIRECT_LIMIT` unknowns, ILU-BiCGStab above."""
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] < DIRECT_LIMIT:
        x = spla.splu(A).solve(b)
    else:
        ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.bicgstab(A, b, rtol=rel_tol * 0.1, atol=0.0, M=M, maxiter=10 * A.shape[0])
        if info != 0:
            raise NotConverged(f"BiCGStab failed with info={info}")
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution")
    if not _residual_ok(A, x, b, rel_tol):
        # one step of iterative refinement usually recovers LU round-off
        x = x + spla.spsolve(A, b - A @ x)
        if not _residual_ok(A, x, b, rel_tol):
            raise NotConverged("residual above tolerance after refinement")
    return x


class ZeroMeanSolver:
    """Factorized solver for singular Neumann/periodic systems whose kernel is
    the constants, with the constraint ``sum(w * x) = 0``.

    ``method='bordered'`` factors ``[[A, w], [w^T, 0]]`` directly.  The
    default ``'shifted'`` factors the nonsingular ``A + e_0 e_0^T`` instead:
    for a compatible load the multiplier vanishes, the shifted solve returns a
    solution of ``A x = b`` and the weighted mean is removed afterwards.  Both
    give the same solution; the shifted matrix keeps the sparsity pattern of
    ``A`` and factors several times faster.
    """

    def __init__(self, A, weights, method: str = "shifted"):
        A = sp.csr_matrix(A)
        w = np.asarray(weights, dtype=float)
        n = A.shape[0]
        self.A = A
        self.weights = w
        self.method = method
        if method == "bordered":
            col = sp.csr_matrix(w.reshape(n, 1))
            B = sp.bmat([[A, col], [col.T, None]], format="csc")
            self.lu = spla.splu(B)
        elif method == "shifted":
            shift = sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n))
            self.lu = spla.splu((A + shift).tocsc(), permc_spec="MMD_AT_PLUS_A")
        else:
            raise ValueError(f"unknown method {method!r}")

    def _raw(self, B):
        if self.method == "bordered":
            rhs = np.vstack([B, np.zeros((1, B.shape[1]))])
            return self.lu.solve(rhs)[:-1]
        X = self.lu.solve(B)
        return X - np.outer(np.ones(len(X)), self.weights @ X / self.weights.sum())

    def solve(self, b, rel_tol: float = DEFAULT_RTOL):
        b = np.asarray(b, dtype=float)
        single = b.ndim == 1
        B = b.reshape(len(b), -1)
        norms = np.linalg.norm(B, axis=0)
        bad = np.abs(B.sum(axis=0)) > 1e-10 * norms
        if np.any(bad & (norms > 0)):
            raise IncompatibleRhs("right-hand side is not orthogonal to constants")
        X = self._raw(B)
        R = B - self.A @ X
        for k in range(B.shape[1]):
            if norms[k] > 0 and np.linalg.norm(R[:, k]) > rel_tol * norms[k]:
                X[:, k] += self._raw(R[:, [k]] - R[:, [k]].mean())[:, 0]
                if np.linalg.norm(B[:, k] - self.A @ X[:, k]) > rel_tol * norms[k]:
                    raise NotConverged("zero-mean solve above residual tolerance")
        return X[:, 0] if single else X


def solve_zero_mean(A, b, mass_weights, rel_tol: float = DEFAULT_RTOL, method: str = "shifted"):
    """Solve ``A x = b`` subject to ``sum(w * x) = 0``."""
    return ZeroMeanSolver(A, mass_weights, method).solve(b, rel_tol)
