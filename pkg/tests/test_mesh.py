import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.exceptions import HoleTooLarge, HoleUnresolved, MeshError
from twoscale.fem import DofMap
from twoscale.mesh import (Marker, build_disk_mesh, build_macro_mesh, build_perforated_cell_mesh,
                           check_mesh, disk_mesh_rings, dump_mesh, load_mesh, square_mesh_from_divisions)


def test_macro_mesh_coarsest_has_unit_area():
    m = build_macro_mesh(1.0)
    assert m.area() == 1.0
    assert check_mesh(m, 1.0) == []


def test_diagonal_two_divisions_counts():
    m = square_mesh_from_divisions(2, "diagonal")
    assert m.n_triangles == 8
    assert m.n_vertices == 9


def test_macro_mesh_paper_size():
    m = build_macro_mesh(0.05)
    assert m.max_edge() <= 0.05 + 1e-15
    assert abs(m.area() - 1.0) <= 1e-12
    assert len(m.periodic_pairs) == 0
    assert np.all(m.boundary_markers == Marker.OUTER_SQUARE)
    assert check_mesh(m, 1.0) == []


@pytest.mark.parametrize("H", [0.0, -0.1, 1.5, float("nan")])
def test_macro_mesh_rejects_bad_size(H):
    with pytest.raises(MeshError):
        build_macro_mesh(H)


def test_disk_area_within_bound():
    m = build_disk_mesh(0.25, 0.06)
    assert abs(m.area() - math.pi * 0.0625) <= 5 * 0.06**2
    assert check_mesh(m, math.pi * 0.0625) == []


def test_disk_coarsest_hexagon():
    m = disk_mesh_rings(0.25, 1)
    assert m.n_triangles == 6
    assert len(m.boundary_edges) == 6
    assert m.signed_areas().min() > 0


def test_disk_area_defect_second_order():
    defects = []
    for rings in (4, 8, 16):
        m = disk_mesh_rings(0.25, rings)
        defects.append(math.pi * 0.0625 - m.area())
    ratios = np.array(defects[:-1]) / np.array(defects[1:])
    assert np.all(np.abs(ratios - 4.0) < 0.3)


def test_disk_rejects_oversized():
    with pytest.raises(MeshError):
        build_disk_mesh(0.25, 0.25)


def test_disk_interface_on_circle():
    m = build_disk_mesh(0.25, 0.05)
    iv = m.interface_vertices()
    assert np.allclose(np.hypot(*m.vertices[iv].T), 0.25, atol=1e-14)
    assert len(iv) == 6 * 5


def test_cell_mesh_area_and_invariants():
    m = build_perforated_cell_mesh(0.25, 0.02)
    assert abs(m.area() - (1 - math.pi * 0.0625)) <= 5 * 0.02
    assert check_mesh(m) == []
    iv = m.interface_vertices()
    assert np.allclose(np.hypot(*(m.vertices[iv] - 0.5).T), 0.25, atol=1e-14)


def test_cell_periodic_partner():
    m = build_perforated_cell_mesh(0.25, 0.02)
    v = m.vertices
    i = np.nonzero(np.all(np.isclose(v, (0.0, 0.4), atol=1e-12), axis=1))[0][0]
    j = np.nonzero(np.all(np.isclose(v, (1.0, 0.4), atol=1e-12), axis=1))[0][0]
    assert [i, j] in m.periodic_pairs.tolist()


def test_cell_corners_collapse_to_one_master():
    m = build_perforated_cell_mesh(0.2, 0.05)
    dm = DofMap.from_mesh(m)
    corners = [np.nonzero(np.all(np.isclose(m.vertices, c), axis=1))[0][0] for c in [(0, 0), (1, 0), (0, 1), (1, 1)]]
    assert len({int(dm.index[c]) for c in corners}) == 1


def test_cell_pairs_cover_outer_boundary_once():
    m = build_perforated_cell_mesh(0.3, 0.04)
    outer = m.marked_vertices(Marker.OUTER_SQUARE)
    pp = m.periodic_pairs
    appear = np.concatenate([pp[:, 0], pp[:, 1]])
    assert set(appear.tolist()) == set(outer.tolist())
    # every non-corner vertex appears once
    x, y = m.vertices[outer].T
    corner = ((np.isclose(x, 0) | np.isclose(x, 1)) & (np.isclose(y, 0) | np.isclose(y, 1)))
    counts = np.bincount(appear, minlength=m.n_vertices)
    assert np.all(counts[outer[~corner]] == 1)


def test_cell_hole_too_large():
    with pytest.raises(HoleTooLarge):
        build_perforated_cell_mesh(0.49, 0.02)


def test_cell_hole_unresolved():
    with pytest.raises(HoleUnresolved):
        build_perforated_cell_mesh(0.03, 0.02)


def test_cell_mesh_deterministic():
    a = build_perforated_cell_mesh(0.27, 0.03)
    b = build_perforated_cell_mesh(0.27, 0.03)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_dump_roundtrip(tmp_path):
    m = build_perforated_cell_mesh(0.25, 0.05)
    p = tmp_path / "m.txt"
    dump_mesh(m, p)
    back = load_mesh(p)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_edges, m.boundary_edges)
    assert np.array_equal(back.boundary_markers, m.boundary_markers)
    assert np.array_equal(back.periodic_pairs, m.periodic_pairs)


def test_mirrored_mesh_valid():
    m = build_perforated_cell_mesh(0.22, 0.04).mirrored(0)
    assert m.signed_areas().min() > 0


@settings(max_examples=25, deadline=None)
@given(rho=st.floats(0.08, 0.4), H=st.floats(0.02, 0.05))
def test_cell_mesh_property_sweep(rho, H):
    if not (2 * H < rho < 0.5 - 2 * H):
        return
    m, info = build_perforated_cell_mesh(rho, H, return_snap_info=True)
    assert m.signed_areas().min() > 0
    assert info["post_min_area"] > 0.05 * info["pre_min_area"]
    assert abs(m.area() - (1 - math.pi * rho**2)) <= 5 * H
    assert check_mesh(m) == []


@settings(max_examples=20, deadline=None)
@given(r=st.floats(0.05, 0.45), frac=st.floats(0.1, 0.9))
def test_disk_mesh_property_sweep(r, frac):
    H = frac * r
    m = build_disk_mesh(r, H)
    assert m.signed_areas().min() > 0
    assert abs(m.area() - math.pi * r * r) <= 5 * H * H


@settings(max_examples=20, deadline=None)
@given(rho=st.floats(0.1, 0.35))
def test_periodic_pairing_is_an_involution(rho):
    m = build_perforated_cell_mesh(rho, 0.04)
    pp = m.periodic_pairs
    fwd = {int(a): int(b) for a, b in pp}
    back = {int(b): int(a) for a, b in pp}
    for a, b in fwd.items():
        assert back[b] == a or np.allclose(m.vertices[a], np.round(m.vertices[a]))
