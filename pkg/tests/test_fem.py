import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from twoscale import fem
from twoscale.exceptions import IncompatibleRhs, IndefiniteDetected
from twoscale.mesh import Marker, Mesh2D, build_disk_mesh, build_macro_mesh, build_perforated_cell_mesh


def single_triangle(p=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))):
    return Mesh2D(np.array(p, dtype=float), np.array([[0, 1, 2]]), np.zeros((0, 2), dtype=np.int64),
                  np.zeros(0, dtype=np.int64))


def test_reference_triangle_stiffness():
    A = fem.assemble_stiffness(single_triangle()).toarray()
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(A, expected, atol=1e-15)


def test_stiffness_scales_linearly_with_coefficient():
    m = build_macro_mesh(0.25)
    A1 = fem.assemble_stiffness(m, 1.0)
    A2 = fem.assemble_stiffness(m, 2.0 * np.eye(2))
    assert abs(A2 - 2 * A1).max() < 1e-14


def test_stiffness_rows_sum_to_zero():
    A = fem.assemble_stiffness(build_perforated_cell_mesh(0.25, 0.05), np.diag([0.3, 0.7]))
    assert np.abs(np.asarray(A.sum(axis=1))).max() < 1e-13
    assert abs(A - A.T).max() < 1e-15


def test_reference_mass():
    M = fem.assemble_mass(single_triangle()).toarray()
    assert np.allclose(M, (np.ones((3, 3)) + np.eye(3)) / 24.0, atol=1e-16)


def test_mass_sums_to_area():
    m = build_perforated_cell_mesh(0.3, 0.04)
    assert abs(fem.assemble_mass(m).sum() - m.area()) < 1e-13


def test_zero_coefficient_gives_zero_matrix():
    m = build_macro_mesh(0.5)
    assert fem.assemble_stiffness(m, 0.0).nnz == 0
    assert fem.assemble_mass(m, 0.0).nnz == 0


def test_nonfinite_coefficient_rejected():
    with pytest.raises(ValueError):
        fem.assemble_mass(build_macro_mesh(0.5), float("nan"))


def _moment_oracle_convection(mesh, nodal_vel):
    """Entry (i, j) = int phi_j v . grad(phi_i) for a P1 velocity, from
    int lambda_j lambda_k = |T| (1 + delta_jk) / 12."""
    geo = fem.Geometry(mesh)
    n = mesh.n_vertices
    C = np.zeros((n, n))
    for m, tri in enumerate(mesh.triangles):
        A = geo.area[m]
        for i in range(3):
            for j in range(3):
                val = 0.0
                for k in range(3):
                    w = A * (1 + (j == k)) / 12.0
                    val += w * nodal_vel[tri[k]] @ geo.grad[m, i]
                C[tri[i], tri[j]] += val
    return C


def test_convection_linear_velocity_exact():
    m = build_macro_mesh(0.5)
    v = m.vertices
    nodal = np.column_stack([1.0 + 2 * v[:, 0] - v[:, 1], 0.5 * v[:, 1] - 3 * v[:, 0]])
    C = fem.assemble_convection(m, lambda xy: np.stack([1.0 + 2 * xy[..., 0] - xy[..., 1],
                                                       0.5 * xy[..., 1] - 3 * xy[..., 0]], axis=-1))
    assert np.allclose(C.toarray(), _moment_oracle_convection(m, nodal), atol=1e-14)


def test_convection_constant_velocity_midpoint():
    m = single_triangle(((0.1, 0.2), (0.9, 0.3), (0.4, 1.1)))
    vel = np.array([0.3, -0.7])
    geo = fem.Geometry(m)
    C = fem.assemble_convection(m, vel).toarray()
    expected = np.outer(geo.grad[0] @ vel, np.ones(3)) * geo.area[0] / 3.0
    assert np.allclose(C, expected, atol=1e-15)


def test_interface_load_perimeter():
    H = 0.02
    m = build_perforated_cell_mesh(0.25, H)
    v = fem.assemble_interface_load(m, 1.0)
    assert abs(v.sum() - 2 * math.pi * 0.25) <= 5 * H
    assert np.count_nonzero(fem.assemble_interface_load(m, 0.0)) == 0


def test_interface_normals_point_into_hole():
    m = build_perforated_cell_mesh(0.25, 0.03)
    e, normal, _ = fem.boundary_edge_normals(m, Marker.INTERFACE_GAMMA)
    mid = 0.5 * (m.vertices[e[:, 0]] + m.vertices[e[:, 1]])
    # outward from the perforated domain means toward the hole centre
    assert np.all(np.einsum("ed,ed->e", normal, mid - 0.5) < 0)
    v = fem.assemble_interface_load(m, lambda xy, n: np.broadcast_to(n[:, None, 0], xy.shape[:2]))
    assert abs(v.sum()) < 1e-12


def test_interface_load_linear_exact():
    m = build_disk_mesh(0.25, 0.08)
    e, _, length = fem.boundary_edge_normals(m, Marker.INTERFACE_GAMMA)
    v = fem.assemble_interface_load(m, lambda xy, n: xy[..., 0])
    # int_edge x phi_i: Simpson is exact for the quadratic integrand
    oracle = np.zeros(m.n_vertices)
    for (a, b), L in zip(e, length):
        xa, xb = m.vertices[a, 0], m.vertices[b, 0]
        oracle[a] += L * (2 * xa + xb) / 6
        oracle[b] += L * (xa + 2 * xb) / 6
    assert np.allclose(v, oracle, atol=1e-15)


def test_load_quadratic_source_exact():
    m = single_triangle()
    b = fem.assemble_load(m, lambda xy: xy[..., 0])
    # int x lambda_i over the reference triangle
    assert np.allclose(b, [1 / 24, 1 / 12, 1 / 24], atol=1e-16)


def test_gradient_load_constant_field():
    m = build_macro_mesh(0.25)
    b = fem.assemble_gradient_load(m, np.array([1.0, 0.0]))
    # int grad(phi_i) . e1 = boundary integral of phi_i n_x
    assert abs(b.sum()) < 1e-13


def test_random_coefficient_quadrature_oracle():
    rng = np.random.default_rng(4)
    m = single_triangle(((0.2, 0.1), (1.3, 0.4), (0.5, 1.2)))
    c = rng.normal(size=6)

    def k(xy):
        x, y = xy[..., 0], xy[..., 1]
        s = 2.0 + c[0] * x + c[1] * y + c[2] * x * x + c[3] * x * y + c[4] * y * y
        return s[..., None, None] * np.eye(2)

    A = fem.assemble_stiffness(m, k).toarray()
    # edge-midpoint rule is an independent degree-2 exact rule
    p = m.vertices
    mids = np.array([(p[0] + p[1]) / 2, (p[1] + p[2]) / 2, (p[2] + p[0]) / 2])
    geo = fem.Geometry(m)
    kbar = k(mids).mean(axis=0)
    oracle = geo.area[0] * geo.grad[0] @ kbar @ geo.grad[0].T
    assert np.allclose(A, oracle, atol=1e-12)


def _interior_solve(m, coeff, u_exact):
    A = fem.assemble_stiffness(m, coeff).tocsr()
    bnd = np.unique(m.boundary_edges.ravel())
    free = np.setdiff1d(np.arange(m.n_vertices), bnd)
    u = u_exact(m.vertices)
    rhs = -A[free][:, bnd] @ u[bnd]
    x = u.copy()
    x[free] = spla.spsolve(A[free][:, free].tocsc(), rhs)
    return x, u


def test_patch_test_reproduces_linear_field():
    m = build_macro_mesh(0.125)
    x, u = _interior_solve(m, np.array([[2.0, 0.3], [0.3, 1.0]]), lambda v: 1.0 + 2 * v[:, 0] - 3 * v[:, 1])
    assert np.abs(x - u).max() < 1e-12


def test_shifted_zero_mean_matches_manufactured_solution():
    m = build_perforated_cell_mesh(0.25, 0.04)
    dm = fem.DofMap.from_mesh(m)
    A, _ = fem.reduce(fem.assemble_stiffness(m), None, dm)
    w = np.asarray(fem.reduce(fem.assemble_mass(m), None, dm)[0].sum(axis=1)).ravel()
    rng = np.random.default_rng(0)
    xs = rng.normal(size=A.shape[0])
    xs -= w @ xs / w.sum()
    b = A @ xs
    for method in ("shifted", "bordered"):
        x = fem.solve_zero_mean(A, b, w, method=method)
        d = x - xs
        assert math.sqrt(d @ (A @ d)) <= 1e-8 * math.sqrt(xs @ (A @ xs))
        assert abs(w @ x) < 1e-12


def test_zero_mean_zero_rhs_and_incompatible():
    m = build_perforated_cell_mesh(0.25, 0.05)
    dm = fem.DofMap.from_mesh(m)
    A, _ = fem.reduce(fem.assemble_stiffness(m), None, dm)
    w = np.ones(A.shape[0])
    assert np.all(fem.solve_zero_mean(A, np.zeros(A.shape[0]), w) == 0)
    with pytest.raises(IncompatibleRhs):
        fem.solve_zero_mean(A, w, w)


def test_dofmap_folding_and_pinning():
    dm = fem.DofMap(5, pairs=[(0, 3), (3, 4)], pinned=[2])
    assert dm.n_free == 2
    assert dm.index[0] == dm.index[3] == dm.index[4]
    assert dm.index[2] == -1
    x = dm.expand(np.array([1.0, 2.0]), pinned_value=7.0)
    assert x.tolist() == [1.0, 2.0, 7.0, 1.0, 1.0]


def test_cg_matches_direct_and_detects_indefinite():
    m = build_macro_mesh(0.1)
    A = (fem.assemble_stiffness(m) + fem.assemble_mass(m)).tocsr()
    b = fem.assemble_load(m, lambda xy: np.sin(3 * xy[..., 0]))
    x = fem.solve_spd(A, b, rel_tol=1e-12)
    assert np.linalg.norm(b - A @ x) <= 1e-12 * np.linalg.norm(b)
    assert np.allclose(x, spla.spsolve(A.tocsc(), b), atol=1e-10)
    with pytest.raises(IndefiniteDetected):
        fem.solve_spd(-A, b)


def test_solve_general_nonsymmetric():
    m = build_macro_mesh(0.1)
    A = (fem.assemble_stiffness(m) + fem.assemble_mass(m) + fem.assemble_convection(m, np.array([1.0, 0.5])))
    b = np.ones(m.n_vertices)
    x = fem.solve_general(A, b)
    assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b)


def test_parallel_assembly_is_bitwise_identical():
    m = build_perforated_cell_mesh(0.25, 0.03)
    A1 = fem.assemble_stiffness(m, np.diag([1.0, 2.0]))
    A4 = fem.assemble_stiffness(m, np.diag([1.0, 2.0]), workers=4)
    assert np.array_equal(A1.indptr, A4.indptr) and np.array_equal(A1.data, A4.data)


tri = st.tuples(st.floats(-1, 1), st.floats(-1, 1))


@settings(max_examples=60, deadline=None)
@given(p=st.tuples(tri, tri, tri), k11=st.floats(0.1, 5), k22=st.floats(0.1, 5))
def test_local_matrices_properties(p, k11, k22):
    pts = np.array(p)
    e1, e2 = pts[1] - pts[0], pts[2] - pts[0]
    area = 0.5 * (e1[0] * e2[1] - e1[1] * e2[0])
    if abs(area) < 1e-3:
        return
    if area < 0:
        pts = pts[[0, 2, 1]]
    m = single_triangle(pts)
    A = fem.assemble_stiffness(m, np.diag([k11, k22])).toarray()
    M = fem.assemble_mass(m).toarray()
    assert np.allclose(A, A.T, atol=1e-12 * np.abs(A).max())
    assert np.allclose(A.sum(axis=1), 0, atol=1e-10 * np.abs(A).max())
    assert np.linalg.eigvalsh(A).min() > -1e-10 * np.abs(A).max()
    assert abs(M.sum() - abs(area)) < 1e-12
    assert np.all(M > 0)


def test_csr_output_is_canonical():
    A = fem.assemble_mass(build_macro_mesh(0.5))
    assert isinstance(A, sp.csr_matrix) and A.has_sorted_indices
