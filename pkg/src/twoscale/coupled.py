"""Semi-implicit two-scale time stepping.

Unknowns per step are the macro temperature ``Theta`` (P1 on the macro mesh)
and, for every macro node ``n``, a micro temperature ``vartheta_n`` (P1 on the
reference disk).  The height ``h`` is advanced explicitly before each solve.

Micro integrals over ``Omega`` use the lumped weights ``w_n = int Phi_n``, so
the micro blocks are decoupled from each other and couple to the macro field
only through the interface condition ``vartheta_n = Theta_n`` on ``Gamma0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import fem
from .coefficients import macro_coeffs
from .config import ScenarioConfig, field_function, macro_source, micro_source
from .exceptions import HeightOutOfRange, NotConverged
from .fem import QUAD_BARY
from .hanzawa import DiskGeometry, map_radial, radial_scalars
from .mesh import Mesh2D, build_disk_mesh, build_macro_mesh


@dataclass(frozen=True)
class TwoScaleState:
    t: float
    theta_macro: np.ndarray  # (N_M,)
    theta_micro: np.ndarray  # (N_M, N_m)
    h: np.ndarray  # (N_M,)
    dh_dt: np.ndarray  # (N_M,)
    step: int = 0


@dataclass
class Trajectory:
    times: np.ndarray
    theta: np.ndarray  # (K, N_M)
    micro: np.ndarray  # (K, N_M, N_m)
    h: np.ndarray  # (K, N_M)
    macro_mesh: Mesh2D
    micro_mesh: Mesh2D
    summary: dict = field(default_factory=dict)

    def save(self, path) -> None:
        m, u = self.macro_mesh, self.micro_mesh
        np.savez_compressed(path, times=self.times, theta=self.theta, micro=self.micro, h=self.h,
                            macro_v=m.vertices, macro_t=m.triangles, macro_h=m.h_target,
                            micro_v=u.vertices, micro_t=u.triangles, micro_h=u.h_target, micro_r=u.radius,
                            micro_be=u.boundary_edges, micro_bm=u.boundary_markers,
                            macro_be=m.boundary_edges, macro_bm=m.boundary_markers)

    @classmethod
    def load(cls, path) -> "Trajectory":
        d = np.load(path)
        empty = np.zeros((0, 2), dtype=np.int64)
        mm = Mesh2D(d["macro_v"], d["macro_t"], d["macro_be"], d["macro_bm"], empty.copy(),
                    float(d["macro_h"]), (0.5, 0.5), 0.0)
        um = Mesh2D(d["micro_v"], d["micro_t"], d["micro_be"], d["micro_bm"], empty.copy(),
                    float(d["micro_h"]), (0.0, 0.0), float(d["micro_r"]))
        return cls(d["times"], d["theta"], d["micro"], d["h"], mm, um)


class CoupledProblem:
    """Meshes, fixed matrices and the per-step block system for one scenario.

    ``interpolant`` is any object with ``tensor(h) -> (..., 2, 2)`` (for
    example a fitted :class:`twoscale.precompute.ConductivityInterpolator`).
    """

    def __init__(self, config: ScenarioConfig, interpolant, macro_mesh: Mesh2D | None = None,
                 micro_mesh: Mesh2D | None = None, workers: int = 1):
        self.config = config
        self.interpolant = interpolant
        self.workers = workers
        self.r = float(config.r)
        self.macro = macro_mesh or build_macro_mesh(config.H_M, config.macro_pattern)
        self.micro = micro_mesh or build_disk_mesh(config.r, config.H_m)
        self.geom = DiskGeometry(center=(0.0, 0.0), r=self.r)

        self.mgeo = fem.Geometry(self.macro)
        self.M_omega = fem.assemble_mass(self.macro)
        self.w = np.asarray(self.M_omega.sum(axis=1)).ravel()
        self.N_M = self.macro.n_vertices

        kappa = np.asarray(config.kappa, dtype=float)
        self.M_y = fem.assemble_mass(self.micro)
        self.S_y = fem.assemble_stiffness(self.micro, kappa)
        # v(h) = gamma (y - c) for the radial map; center is the origin here
        self.V_y = fem.assemble_convection(self.micro, lambda y: y)
        self.N_m = self.micro.n_vertices
        self.gamma_idx = self.micro.interface_vertices()
        mask = np.ones(self.N_m, dtype=bool)
        mask[self.gamma_idx] = False
        self.interior_idx = np.nonzero(mask)[0]
        self.N_I = len(self.interior_idx)
        self.mass1 = np.asarray(self.M_y.sum(axis=1)).ravel()

        self.F = macro_source(config.source)
        self.f = micro_source(config.micro_source)
        self._P = self._prolongation()

    # -- helpers -------------------------------------------------------------
    def to_qp(self, nodal):
        """P1 interpolation of a nodal macro field to quadrature points, ``(M, 3)``."""
        return np.asarray(nodal)[self.macro.triangles] @ QUAD_BARY.T

    def _prolongation(self):
        """Map (Theta, interior micro DOFs) to (Theta, full micro DOFs)."""
        N_M, N_m, N_I = self.N_M, self.N_m, self.N_I
        rows = [np.arange(N_M)]
        cols = [np.arange(N_M)]
        nodes = np.arange(N_M)
        g = self.gamma_idx
        rows.append((N_M + nodes[:, None] * N_m + g[None, :]).ravel())
        cols.append(np.repeat(nodes, len(g)))
        rows.append((N_M + nodes[:, None] * N_m + self.interior_idx[None, :]).ravel())
        cols.append((N_M + nodes[:, None] * N_I + np.arange(N_I)[None, :]).ravel())
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(N_M + N_M * N_m, N_M + N_M * N_I))

    def admissible(self, h):
        m = self.config.h_margin
        return (h > -self.r + max(m, 0.01 * self.r)) & (h < 0.5 - self.r - m)

    # -- states ----------------------------------------------------------------
    def initial_state(self) -> TwoScaleState:
        x = self.macro.vertices
        theta = field_function(self.config.theta0)(x)
        var = np.repeat(field_function(self.config.vartheta0)(x)[:, None], self.N_m, axis=1)
        var[:, self.gamma_idx] = theta[:, None]
        zero = np.zeros(self.N_M)
        return TwoScaleState(0.0, theta, var, zero.copy(), zero.copy(), 0)

    def update_height(self, state: TwoScaleState, dt: float):
        """Explicit ``h_i = h_{i-1} + dt v (Theta_{i-1} - Theta_ref)``."""
        dh = self.config.v_speed * (state.theta_macro - self.config.theta_ref)
        h = state.h + dt * dh
        ok = self.admissible(h)
        if not np.all(ok):
            node = int(np.nonzero(~ok)[0][0])
            raise HeightOutOfRange(
                f"height {h[node]:.6g} at macro node {node} left the admissible range at t={state.t + dt:.6g}",
                node=node, time=state.t + dt, value=float(h[node]))
        return h, dh

    def energy(self, state: TwoScaleState) -> float:
        """``int C(h) Theta + sum_n w_n int c(h_n) vartheta_n``."""
        C = macro_coeffs(self.to_qp(state.h), self.r).C
        macro = fem.assemble_mass(self.macro, C) @ state.theta_macro
        c, _, _ = radial_scalars(state.h, self.r)
        micro = (state.theta_micro @ self.mass1) * c * self.w
        return float(macro.sum() + micro.sum())

    # -- assembly ----------------------------------------------------------------
    def assemble_block_system(self, state: TwoScaleState, h_new, dh, dt: float):
        """Matrix and right-hand side of one step.

        Returns ``(A, b, mode)``.  In ``slaved`` mode the unknowns are
        ``Theta`` followed by the interior micro DOFs of every node; in
        ``literal`` mode all micro DOFs are kept and the interface condition
        appears as explicit +1/-1 rows.
        """
        cfg = self.config
        t_new = state.t + dt
        r = self.r
        natural = cfg.time_scheme == "natural"

        # macro part
        hq = self.to_qp(h_new)
        dhq = self.to_qp(dh)
        mc = macro_coeffs(hq, r)
        M_C = fem.assemble_mass(self.macro, mc.C, self.workers)
        A_K = fem.assemble_stiffness(self.macro, self.interpolant.tensor(hq), self.workers)
        Amac = (M_C / dt + 0.5 * A_K).tocsr()
        th_old = state.theta_macro
        rhs_mac = -0.5 * (A_K @ th_old)
        if natural:
            C_old = macro_coeffs(self.to_qp(state.h), r).C
            rhs_mac += fem.assemble_mass(self.macro, C_old) @ th_old / dt
        else:
            rhs_mac += M_C @ th_old / dt
            rhs_mac -= fem.assemble_mass(self.macro, mc.dC_dh * dhq) @ th_old
        if self.F is not None:
            rhs_mac += fem.assemble_load(self.macro, self.F(self.mgeo.qpoints, t_new))
        rhs_mac -= fem.assemble_load(self.macro, mc.L * dhq)

        # micro part, one block per macro node
        c, dc, gamma = radial_scalars(h_new, r, dh)
        alpha = c / dt
        w = self.w
        W = lambda s: sp.diags(w * s)  # noqa: E731
        G = (sp.kron(W(alpha), self.M_y) + sp.kron(W(np.full(self.N_M, 0.5)), self.S_y)
             + sp.kron(W(gamma), self.V_y)).tocsr()
        old = state.theta_micro
        Mold = old @ self.M_y.T  # rows: M vartheta_n
        Sold = old @ self.S_y.T
        if natural:
            c_old, _, _ = radial_scalars(state.h, r)
            rhs_mic = (c_old / dt)[:, None] * Mold - 0.5 * Sold
        else:
            rhs_mic = (alpha - dc * dh)[:, None] * Mold - 0.5 * Sold
        if self.f is not None:
            rhs_mic += self._micro_load(h_new, t_new)
        rhs_mic = (w[:, None] * rhs_mic).ravel()

        full = sp.block_diag([Amac, G], format="csr")
        b_full = np.concatenate([rhs_mac, rhs_mic])
        if cfg.coupling == "slaved":
            P = self._P
            return fem.finalize(P.T @ full @ P), P.T @ b_full, "slaved"
        return self._literal(Amac, G, rhs_mac, rhs_mic), None, "literal"

    def _micro_load(self, h_new, t):
        """``int J f(s_h(y)) phi`` per node (rows)."""
        geo = fem.Geometry(self.micro)
        out = np.empty((self.N_M, self.N_m))
        for n, hn in enumerate(h_new):
            s, _, J = map_radial(geo.qpoints, hn, self.geom)
            out[n] = fem.assemble_load(self.micro, J * self.f(s, t))
        return out

    def _literal(self, Amac, G, rhs_mac, rhs_mic):
        N_M, N_m = self.N_M, self.N_m
        g = self.gamma_idx
        nodes = np.arange(N_M)
        gdofs = (nodes[:, None] * N_m + g[None, :]).ravel()
        E = sp.csr_matrix((np.ones(len(gdofs)), (np.repeat(nodes, len(g)), gdofs)), shape=(N_M, N_M * N_m))
        top = sp.hstack([Amac, E @ G])
        is_g = np.zeros(N_M * N_m, dtype=bool)
        is_g[gdofs] = True
        keep = sp.diags((~is_g).astype(float))
        # interface rows: +1 on Theta_n, -1 on vartheta_{n,g}
        D = sp.csr_matrix((np.ones(len(gdofs)), (gdofs, np.repeat(nodes, len(g)))), shape=(N_M * N_m, N_M))
        bottom = sp.hstack([D, keep @ G - sp.diags(is_g.astype(float))])
        A = fem.finalize(sp.vstack([top, bottom]))
        b = np.concatenate([rhs_mac + E @ rhs_mic, np.where(is_g, 0.0, rhs_mic)])
        return A, b

    # -- stepping ----------------------------------------------------------------
    def step(self, state: TwoScaleState, dt: float) -> TwoScaleState:
        h_new, dh = self.update_height(state, dt)
        A, b, mode = self.assemble_block_system(state, h_new, dh, dt)
        if mode == "literal":
            A, b = A
        x = fem.solve_general(A, b)
        N_M, N_m = self.N_M, self.N_m
        theta = x[:N_M]
        micro = np.empty((N_M, N_m))
        if mode == "slaved":
            micro[:, self.interior_idx] = x[N_M:].reshape(N_M, self.N_I)
            micro[:, self.gamma_idx] = theta[:, None]
        else:
            micro[:] = x[N_M:].reshape(N_M, N_m)
            micro[:, self.gamma_idx] = theta[:, None]
        return TwoScaleState(state.t + dt, theta, micro, h_new, dh, state.step + 1)

    def interface_flux_diagnostic(self, state: TwoScaleState, previous: TwoScaleState | None = None,
                                  dt: float | None = None) -> np.ndarray:
        """Heat flux into each micro cell through ``Gamma``.

        Without ``previous`` the flux ``int kappa grad(vartheta) . n`` is
        integrated from the gradients of the boundary triangles.  With
        ``previous`` (and ``dt``) the variational flux is returned: the
        residual of the micro equation tested with 1, which equals the
        discrete rate of change of micro heat.
        """
        if previous is None:
            return _edge_flux(self.micro, np.asarray(self.config.kappa, dtype=float), state.theta_micro)
        dt = dt if dt is not None else state.t - previous.t
        c, dc, _ = radial_scalars(state.h, self.r, state.dh_dt)
        mass_new = state.theta_micro @ self.mass1
        mass_old = previous.theta_micro @ self.mass1
        q = c * (mass_new - mass_old) / dt
        if self.config.time_scheme == "product":
            q += dc * state.dh_dt * mass_old
        else:
            c_old, _, _ = radial_scalars(previous.h, self.r)
            q = (c * mass_new - c_old * mass_old) / dt
        if self.f is not None:
            q -= self._micro_load(state.h, state.t).sum(axis=1)
        return q


def _edge_flux(mesh: Mesh2D, kappa, fields):
    """``int_Gamma kappa grad u . n`` per row of ``fields`` from element gradients."""
    geo = fem.Geometry(mesh)
    e, normal, length = fem.boundary_edge_normals(mesh)
    # owning triangle of every boundary edge
    t = mesh.triangles
    key = {}
    for m, tri in enumerate(t):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key[(tri[a], tri[b])] = m
    owner = np.array([key[(i, j)] for i, j in e])
    fields = np.atleast_2d(fields)
    grads = np.einsum("nmk,mkd->nmd", fields[:, t[owner]], geo.grad[owner])
    return np.einsum("nmd,de,me,m->n", grads, kappa, normal, length)


# -- running -----------------------------------------------------------------------

def run_simulation(config: ScenarioConfig, interpolant, macro_mesh=None, micro_mesh=None,
                   workers: int = 1, store_every: int = 1, callback=None, problem=None):
    """Step from ``t = 0`` to ``T_end``; stops early on :class:`HeightOutOfRange`.

    Returns a :class:`Trajectory` with states every ``store_every`` steps
    (always including the start and the last computed step).
    """
    prob = problem or CoupledProblem(config, interpolant, macro_mesh, micro_mesh, workers)
    dt = float(config.dt)
    n_steps = int(round(config.T_end / dt))
    if abs(n_steps * dt - config.T_end) > 1e-9 * max(1.0, config.T_end):
        raise ValueError(f"T_end={config.T_end} is not a multiple of dt={dt}")
    state = prob.initial_state()
    keep = [state]
    stop = {"completed": True}
    norms = []
    for i in range(1, n_steps + 1):
        try:
            new = prob.step(state, dt)
        except HeightOutOfRange as exc:
            stop = {"completed": False, "reason": "height_out_of_range", "node": exc.node,
                    "time": exc.time, "value": exc.value, "message": str(exc)}
            break
        new = replace(new, t=i * dt)
        state = new
        norms.append({"step": i, "t": state.t, "theta_max": float(state.theta_macro.max()),
                      "theta_min": float(state.theta_macro.min()), "h_max": float(state.h.max()),
                      "h_min": float(state.h.min())})
        if callback:
            callback(prob, state)
        if i % store_every == 0 or i == n_steps:
            keep.append(state)
    if keep[-1] is not state:
        keep.append(state)
    traj = Trajectory(
        times=np.array([s.t for s in keep]),
        theta=np.array([s.theta_macro for s in keep]),
        micro=np.array([s.theta_micro for s in keep]),
        h=np.array([s.h for s in keep]),
        macro_mesh=prob.macro, micro_mesh=prob.micro,
    )
    traj.summary = dict(stop, steps=len(norms), N_M=prob.N_M, N_m=prob.N_m,
                        h_max=float(traj.h.max()), h_min=float(traj.h.min()),
                        theta_max=float(traj.theta.max()), theta_min=float(traj.theta.min()),
                        per_step=norms)
    return traj


# -- comparing trajectories ----------------------------------------------------------

def transfer_matrix(src: Mesh2D, points) -> sp.csr_matrix:
    """P1 interpolation of ``src`` nodal values at ``points``.

    Points outside the source polygon (a finer disk boundary, for example)
    use the linear extension of the closest element.
    """
    points = np.asarray(points, dtype=float)
    p = src.vertices[src.triangles]
    cent = p.mean(axis=1)
    k = min(12, len(p))
    _, cand = cKDTree(cent).query(points, k=k)
    cand = cand.reshape(len(points), k)
    a, b, c = p[cand, 0], p[cand, 1], p[cand, 2]
    v0, v1 = b - a, c - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    d = points[:, None, :] - a
    l1 = (d[..., 0] * v1[..., 1] - d[..., 1] * v1[..., 0]) / det
    l2 = (v0[..., 0] * d[..., 1] - v0[..., 1] * d[..., 0]) / det
    bary = np.stack([1 - l1 - l2, l1, l2], axis=-1)
    best = np.argmax(bary.min(axis=-1), axis=1)
    rows = np.arange(len(points))
    tri = src.triangles[cand[rows, best]]
    lam = bary[rows, best]
    return sp.csr_matrix((lam.ravel(), (np.repeat(rows, 3), tri.ravel())), shape=(len(points), src.n_vertices))


def _same_mesh(a: Mesh2D, b: Mesh2D) -> bool:
    return a is b or (a.vertices.shape == b.vertices.shape and a.triangles.shape == b.triangles.shape
                      and np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles))


def _pick(a: Mesh2D, b: Mesh2D):
    """Finer of two meshes (more vertices) as the common target."""
    if _same_mesh(a, b):
        return a, None, None
    target = a if a.n_vertices >= b.n_vertices else b
    Ta = None if target is a else transfer_matrix(a, target.vertices)
    Tb = None if target is b else transfer_matrix(b, target.vertices)
    return target, Ta, Tb


def _common_times(ta, tb, tol=1e-9):
    ia, ib = [], []
    for i, t in enumerate(ta):
        j = np.nonzero(np.abs(tb - t) <= tol)[0]
        if len(j):
            ia.append(i)
            ib.append(j[0])
    if len(ia) < 2:
        raise ValueError("trajectories share fewer than two time levels")
    return np.array(ia), np.array(ib)


def error_norms(traj_a: Trajectory, traj_b: Trajectory) -> dict:
    """Discrete ``L2(S;H1(Omega))``, ``L2(S x Omega;H1(Y0))`` and ``L2(S x Omega)`` differences.

    Fields are moved by P1 interpolation onto the finer macro and micro mesh;
    time integration uses the trapezoidal rule on the shared time levels.
    """
    ia, ib = _common_times(traj_a.times, traj_b.times)
    times = traj_a.times[ia]
    macro, Ta, Tb = _pick(traj_a.macro_mesh, traj_b.macro_mesh)
    micro, Ua, Ub = _pick(traj_a.micro_mesh, traj_b.micro_mesh)
    Mo = fem.assemble_mass(macro)
    H1o = Mo + fem.assemble_stiffness(macro)
    H1y = (fem.assemble_mass(micro) + fem.assemble_stiffness(micro)).toarray()

    def mac(T, u):
        return u if T is None else T @ u

    def mic(T, U, v):
        v = v if T is None else T @ v
        return v if U is None else (U @ v.T).T

    eT, eV, eH = [], [], []
    for i, j in zip(ia, ib):
        d = mac(Ta, traj_a.theta[i]) - mac(Tb, traj_b.theta[j])
        eT.append(d @ (H1o @ d))
        dh = mac(Ta, traj_a.h[i]) - mac(Tb, traj_b.h[j])
        eH.append(dh @ (Mo @ dh))
        D = mic(Ta, Ua, traj_a.micro[i]) - mic(Tb, Ub, traj_b.micro[j])
        eV.append(np.sum((Mo @ D) * (D @ H1y)))

    def integrate(vals):
        vals = np.maximum(np.asarray(vals), 0.0)
        return float(math.sqrt(np.trapezoid(vals, times))) if len(times) > 1 else 0.0

    return {"errTheta": integrate(eT), "errVartheta": integrate(eV), "errH": integrate(eH)}


__all__ = [
    "TwoScaleState", "Trajectory", "CoupledProblem", "run_simulation", "error_norms",
    "transfer_matrix", "NotConverged",
]
