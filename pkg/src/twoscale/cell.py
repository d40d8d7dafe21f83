"""Periodic cell problems on the perforated unit cell and the effective
conductivity ``K(h)`` with its height derivative.

Two discretizations are offered:

* direct: mesh ``Y \\ Y(h)`` for every sample height (used for tables);
* transformed: one mesh of ``Y \\ Y0`` and the tubular Hanzawa pull-back,
  which makes ``K`` a smooth function of ``h`` at fixed mesh and gives the
  derivative through the implicit-function system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fem
from .exceptions import HoleUnresolved, IncompatibleRhs, MeshError
from .hanzawa import DiskGeometry, _check_tubular, psi_and_jacobian
from .mesh import Marker, Mesh2D, build_perforated_cell_mesh


@dataclass(frozen=True)
class CellSolution:
    mesh: Mesh2D
    xi: np.ndarray  # (n_vertices, 2)
    hole_radius: float
    h: float
    weights: np.ndarray  # lumped mass per vertex, defines the zero mean


@dataclass(frozen=True)
class EffectiveTensor:
    k: np.ndarray
    h: float
    h_cell: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.k, dtype=dtype)


def _as_tensor(K_macro) -> np.ndarray:
    K = np.asarray(K_macro, dtype=float)
    if K.ndim == 0:
        K = float(K) * np.eye(2)
    if K.shape != (2, 2):
        raise ValueError("cell conductivity must be a scalar or 2x2 matrix")
    return K


def resolve_h_cell(rho: float, H_cell: float) -> float:
    """Mesh size actually used for hole radius ``rho``.

    The requested size is kept unless the hole or the gap to the cell
    boundary is thinner than 2.5 cells; then it is reduced so the mesh
    preconditions hold.
    """
    return min(H_cell, min(rho, 0.5 - rho) / 2.5)


MAX_REFINE = 16.0


def cell_mesh(rho: float, H_cell: float) -> Mesh2D:
    """Perforated cell mesh with automatic refinement near the range ends.

    Refusing more than :data:`MAX_REFINE`-fold refinement keeps a hole that
    nearly touches the cell boundary from producing an unbounded mesh.
    """
    H = resolve_h_cell(rho, H_cell)
    if not 0 < rho < 0.5:
        raise MeshError(f"hole radius {rho:.6g} is outside (0, 0.5)")
    if H * MAX_REFINE < H_cell:
        raise MeshError(f"hole radius {rho:.6g} leaves a gap too thin for mesh size {H_cell:g}")
    for _ in range(8):
        try:
            return build_perforated_cell_mesh(rho, H)
        except HoleUnresolved:
            if 2 * H >= rho:
                raise
            H /= 1.25
    return build_perforated_cell_mesh(rho, H)


class _PeriodicSystem:
    """Periodic fold plus a factorized zero-mean solver for one matrix."""

    def __init__(self, mesh: Mesh2D, A, method: str = "shifted"):
        self.dofmap = fem.DofMap.from_mesh(mesh)
        self.weights = np.asarray(fem.assemble_mass(mesh).sum(axis=1)).ravel()
        self.A = A
        Ar, _ = fem.reduce(A, None, self.dofmap)
        self.solver = fem.ZeroMeanSolver(Ar, self.dofmap.P.T @ self.weights, method)

    def solve(self, B):
        """Solve for the columns of ``B`` (full-length loads)."""
        Br = self.dofmap.P.T @ B
        scale = np.linalg.norm(Br, axis=0)
        mismatch = np.abs(Br.sum(axis=0))
        if np.any(mismatch > 1e-10 * np.maximum(scale, 1e-300)):
            raise IncompatibleRhs("cell load is not orthogonal to constants")
        # remove round-off so the compatibility check inside the solver is exact
        Br = Br - Br.mean(axis=0)
        return self.dofmap.P @ self.solver.solve(Br)


def _energy_tensor(A, B, X, base):
    """``K_ij = x_i^T A x_j - b_j^T x_i - b_i^T x_j + base_ij``."""
    K = X.T @ (A @ X) - B.T @ X - X.T @ B + base
    return 0.5 * (K + K.T)


def solve_cell_problem(h: float, H_cell: float, K_macro, r: float = 0.25,
                       method: str = "shifted") -> CellSolution:
    """Correctors ``xi_1, xi_2`` on ``Y \\ Y(h)`` for a constant conductivity."""
    K = _as_tensor(K_macro)
    rho = r + h
    mesh = cell_mesh(rho, H_cell)
    sol, _ = _solve_direct(mesh, K, method)
    return CellSolution(mesh=mesh, xi=sol, hole_radius=rho, h=float(h),
                        weights=np.asarray(fem.assemble_mass(mesh).sum(axis=1)).ravel())


def _solve_direct(mesh, K, method="shifted"):
    A = fem.assemble_stiffness(mesh, K)
    B = np.column_stack([fem.assemble_gradient_load(mesh, -K[:, j]) for j in range(2)])
    system = _PeriodicSystem(mesh, A, method)
    X = system.solve(B)
    Kh = _energy_tensor(A, B, X, K * mesh.area())
    return X, Kh


def effective_conductivity(h: float, H_cell: float, K_macro, r: float = 0.25,
                           method: str = "shifted") -> EffectiveTensor:
    """``K(h)_ij = int K (grad xi_j + e_j) . (grad xi_i + e_i)`` on a fresh mesh of ``Y \\ Y(h)``."""
    K = _as_tensor(K_macro)
    mesh = cell_mesh(r + h, H_cell)
    _, Kh = _solve_direct(mesh, K, method)
    return EffectiveTensor(k=Kh, h=float(h), h_cell=float(mesh.h_target))


class TransformedCell:
    """Cell problem pulled back to the fixed domain ``Y \\ Y0`` by the tubular map.

    ``K(h)`` and ``dK_dh(h)`` share one mesh, so ``dK_dh`` is the exact
    derivative of the discrete ``K``.  ``load='boundary'`` replaces the volume
    form of the load by the interface integral ``-int_Gamma0 J K e_j . n phi``.
    """

    def __init__(self, r: float = 0.25, H_cell: float = 0.01, K_macro=0.1,
                 a: float | None = None, load: str = "volume"):
        self.geom = DiskGeometry(center=(0.5, 0.5), r=r, a=a)
        self.K = _as_tensor(K_macro)
        self.mesh = build_perforated_cell_mesh(r, H_cell)
        self.geo = fem.Geometry(self.mesh)
        self.load = load
        psi, D = psi_and_jacobian(self.geo.qpoints, self.geom)
        self.D = D

    def _fields(self, h):
        _check_tubular(h, self.geom)
        D = self.D
        F = np.eye(2) + h * D
        Finv = np.linalg.inv(F)
        J = np.linalg.det(F)
        dFinv = -Finv @ D @ Finv
        dJ = np.trace(D, axis1=-2, axis2=-1) + 2.0 * h * np.linalg.det(D)
        return Finv, J, dFinv, dJ

    def _loads(self, G):
        K = self.K
        if self.load == "volume":
            return np.column_stack([fem.assemble_gradient_load(self.mesh, -(G @ K[:, j])) for j in range(2)])

        def g(j):
            def val(xy, normal):
                _, D = psi_and_jacobian(xy, self.geom)
                Jx = np.linalg.det(np.eye(2) + self._h * D)
                return -Jx * (normal @ K[:, j])[:, None]
            return val

        B = np.column_stack([fem.assemble_interface_load(self.mesh, g(j), Marker.INTERFACE_GAMMA) for j in range(2)])
        return B - B.mean(axis=0)

    def _system(self, h):
        Finv, J, dFinv, dJ = self._fields(h)
        K = self.K
        FinvT = np.swapaxes(Finv, -1, -2)
        Psi = J[..., None, None] * (Finv @ K @ FinvT)
        A = fem.assemble_stiffness(self.mesh, Psi)
        G = J[..., None, None] * Finv
        self._h = h
        B = self._loads(G)
        return Finv, J, dFinv, dJ, A, B, G

    def _int(self, vals):
        return float(np.einsum("q,mq,m->", fem.QUAD_W, vals, self.geo.area))

    def solve(self, h: float):
        Finv, J, dFinv, dJ, A, B, G = self._system(h)
        system = _PeriodicSystem(self.mesh, A)
        X = system.solve(B)
        return X, (Finv, J, dFinv, dJ, A, B, G, system)

    def conductivity(self, h: float) -> np.ndarray:
        """Flux form ``K_ij = K_ij int J - b_i^T x_j``."""
        X, (Finv, J, dFinv, dJ, A, B, G, _) = self.solve(h)
        Kh = self.K * self._int(J) - B.T @ X
        return 0.5 * (Kh + Kh.T)

    def dK_dh(self, h: float, return_k: bool = False):
        """Derivative from the implicit-function system.

        ``u_j`` solves ``A u_j = db_j - dA x_j``; then
        ``dK_ij = int dJ K_ij - db_i^T x_j - b_i^T u_j``, which collects the
        three product-rule integrals (``dF^-1`` term, ``u`` term, ``dJ`` term).
        """
        X, (Finv, J, dFinv, dJ, A, B, G, system) = self.solve(h)
        K = self.K
        FinvT = np.swapaxes(Finv, -1, -2)
        dPsi = (dJ[..., None, None] * (Finv @ K @ FinvT)
                + J[..., None, None] * (dFinv @ K @ FinvT + Finv @ K @ np.swapaxes(dFinv, -1, -2)))
        dA = fem.assemble_stiffness(self.mesh, dPsi)
        dG = dJ[..., None, None] * Finv + J[..., None, None] * dFinv
        dB = np.column_stack([fem.assemble_gradient_load(self.mesh, -(dG @ K[:, j])) for j in range(2)])
        U = system.solve(dB - dA @ X)
        dK = K * self._int(dJ) - dB.T @ X - B.T @ U
        dK = 0.5 * (dK + dK.T)
        if return_k:
            Kh = self.K * self._int(J) - B.T @ X
            return dK, 0.5 * (Kh + Kh.T)
        return dK


def dK_dh(h: float, H_cell: float, K_macro, r: float = 0.25, a: float | None = None) -> np.ndarray:
    """``dK/dh`` at ``h`` on the fixed reference mesh (requires ``|h| <= a/8``)."""
    return TransformedCell(r=r, H_cell=H_cell, K_macro=K_macro, a=a).dK_dh(h)


def voigt_bound(h: float, K_macro, r: float = 0.25) -> np.ndarray:
    """Zero-corrector energy ``K (1 - pi (r+h)^2)``, an upper bound for ``K(h)``."""
    return _as_tensor(K_macro) * (1.0 - math.pi * (r + h) ** 2)
