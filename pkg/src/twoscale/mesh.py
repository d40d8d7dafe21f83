"""Triangular meshes for the macro square, the reference disk and the
perforated periodic cell.

All generators are deterministic: vertices are sorted lexicographically by
(x, y) so repeated calls give bit-identical arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import HoleTooLarge, HoleUnresolved, MeshError


class Marker(enum.IntEnum):
    OUTER_SQUARE = 1
    INTERFACE_GAMMA = 2


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Immutable P1 triangulation.

    ``boundary_edges`` is an ``(E, 2)`` vertex index array with a parallel
    ``boundary_markers`` array of :class:`Marker` values.  ``periodic_pairs``
    holds ``(master, slave)`` identifications; chains (the four corners of the
    unit cell) resolve to a single root master in :class:`twoscale.fem.DofMap`.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    h_target: float = 0.0
    center: tuple = (0.0, 0.0)
    radius: float = 0.0

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "boundary_markers", "periodic_pairs"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, first = np.unique(_edge_keys(e), return_index=True)
        return np.sort(e[first], axis=1)

    def max_edge(self) -> float:
        e = self.edges()
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return float(np.sqrt((d**2).sum(axis=1)).max())

    def marked_vertices(self, marker: Marker) -> np.ndarray:
        sel = self.boundary_edges[self.boundary_markers == int(marker)]
        return np.unique(sel.ravel())

    def interface_vertices(self) -> np.ndarray:
        return self.marked_vertices(Marker.INTERFACE_GAMMA)

    def mirrored(self, axis: int = 0) -> "Mesh2D":
        """Reflect ``y[axis] -> 1 - y[axis]`` (or ``-y`` about the center for
        meshes centered at the origin); triangle orientation is restored."""
        v = self.vertices.copy()
        c = self.center[axis]
        v[:, axis] = 2.0 * c - v[:, axis]
        tri = self.triangles[:, [0, 2, 1]].copy()
        return Mesh2D(v, tri, self.boundary_edges.copy(), self.boundary_markers.copy(),
                      self.periodic_pairs.copy(), self.h_target, self.center, self.radius)


# -- helpers -----------------------------------------------------------------

def _edge_keys(e: np.ndarray) -> np.ndarray:
    lo = np.minimum(e[:, 0], e[:, 1]).astype(np.int64)
    hi = np.maximum(e[:, 0], e[:, 1]).astype(np.int64)
    return lo * (int(hi.max(initial=0)) + 1) + hi


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    """Edges that belong to exactly one triangle, oriented as in the triangle."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    _, inv, counts = np.unique(_edge_keys(e), return_inverse=True, return_counts=True)
    out = e[counts[inv] == 1]
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def _renumber(vertices, triangles):
    """Drop orphan vertices and sort the rest lexicographically by (x, y)."""
    used = np.unique(triangles.ravel())
    v = vertices[used]
    order = np.lexsort((v[:, 1], v[:, 0]))
    new_index = np.empty(len(vertices), dtype=np.int64)
    new_index[used[order]] = np.arange(len(used))
    tri = new_index[triangles]
    return v[order], tri, new_index, used[order]


def _orient_ccw(vertices, triangles):
    p = vertices[triangles]
    a = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    tri = triangles.copy()
    flip = a < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def unit_square_mesh(n: int, pattern: str = "crossed"):
    """Structured triangulation of [0, 1]^2 with ``n`` cells per side.

    ``pattern='diagonal'`` splits each square along the (i, j)-(i+1, j+1)
    diagonal; ``'crossed'`` adds the square center and cuts four triangles.
    Returns raw (vertices, triangles) in construction order.
    """
    if n < 1:
        raise MeshError("need at least one subdivision")
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    corners = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    c0 = idx[:-1, :-1].ravel()
    c1 = idx[1:, :-1].ravel()
    c2 = idx[1:, 1:].ravel()
    c3 = idx[:-1, 1:].ravel()
    if pattern == "diagonal":
        tri = np.concatenate([np.column_stack([c0, c1, c2]), np.column_stack([c0, c2, c3])])
        return corners, tri
    if pattern != "crossed":
        raise ValueError(f"unknown pattern {pattern!r}")
    m = (g[:-1] + g[1:]) / 2.0
    MX, MY = np.meshgrid(m, m, indexing="ij")
    mids = np.column_stack([MX.ravel(), MY.ravel()])
    mid = len(corners) + np.arange(n * n)
    vertices = np.concatenate([corners, mids])
    tri = np.concatenate([
        np.column_stack([c0, c1, mid]),
        np.column_stack([c1, c2, mid]),
        np.column_stack([c2, c3, mid]),
        np.column_stack([c3, c0, mid]),
    ])
    return vertices, tri


def _square_markers(vertices, edges, tol=1e-12):
    p = vertices[edges]
    on_outer = np.zeros(len(edges), dtype=bool)
    for k in (0, 1):
        for val in (0.0, 1.0):
            on_outer |= (np.abs(p[:, 0, k] - val) < tol) & (np.abs(p[:, 1, k] - val) < tol)
    return on_outer


# -- macro square --------------------------------------------------------------

def build_macro_mesh(H_M: float, pattern: str = "crossed") -> Mesh2D:
    """Uniform triangulation of the macro domain [0, 1]^2 with max edge <= H_M.

    At least two cells per side are used, so ``H_M = 1`` still yields a
    valid mesh.
    """
    if not (H_M > 0.0) or H_M > 1.0:
        raise MeshError(f"macro mesh size must lie in (0, 1], got {H_M}")
    if pattern == "crossed":
        n = math.ceil(1.0 / H_M - 1e-9)
    else:
        n = math.ceil(math.sqrt(2.0) / H_M - 1e-9)
    n = max(n, 2)
    return square_mesh_from_divisions(n, pattern, h_target=H_M)


def square_mesh_from_divisions(n: int, pattern: str = "crossed", h_target: float | None = None) -> Mesh2D:
    v, t = unit_square_mesh(n, pattern)
    v, t, _, _ = _renumber(v, t)
    t = _orient_ccw(v, t)
    be = _boundary_edges(t)
    markers = np.full(len(be), int(Marker.OUTER_SQUARE), dtype=np.int64)
    if h_target is None:
        h_target = 1.0 / n if pattern == "crossed" else math.sqrt(2.0) / n
    return Mesh2D(v, t, be, markers, np.zeros((0, 2), dtype=np.int64), float(h_target), (0.5, 0.5), 0.0)


# -- reference disk ------------------------------------------------------------

def disk_mesh_rings(r: float, rings: int, center=(0.0, 0.0), h_target: float | None = None) -> Mesh2D:
    """Polar-structured disk: ring ``k`` carries ``6k`` equally spaced vertices."""
    if rings < 1:
        raise MeshError("need at least one ring")
    pts = [np.zeros((1, 2))]
    start = [0]
    for k in range(1, rings + 1):
        ang = 2.0 * np.pi * np.arange(6 * k) / (6 * k)
        rad = r * k / rings
        pts.append(np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]))
        start.append(start[-1] + (1 if k == 1 else 6 * (k - 1)))
    vertices = np.concatenate(pts)
    tris = []
    for k in range(1, rings + 1):
        outer0 = start[k]
        if k == 1:
            for j in range(6):
                tris.append((0, outer0 + j, outer0 + (j + 1) % 6))
            continue
        inner0 = start[k - 1]
        n_in, n_out = 6 * (k - 1), 6 * k
        for s in range(6):
            # walk one 60 degree sector: k-1 inner segments, k outer segments
            i, o = 0, 0
            while i < k - 1 or o < k:
                a_in = inner0 + (s * (k - 1) + i) % n_in
                a_out = outer0 + (s * k + o) % n_out
                # advance on the side whose next vertex has the smaller angle
                next_in = (i + 1) / (k - 1)
                next_out = (o + 1) / k
                if o < k and (i >= k - 1 or next_out <= next_in):
                    tris.append((a_in, a_out, outer0 + (s * k + o + 1) % n_out))
                    o += 1
                else:
                    tris.append((a_in, a_out, inner0 + (s * (k - 1) + i + 1) % n_in))
                    i += 1
    tri = np.array(tris, dtype=np.int64)
    vertices = vertices + np.asarray(center, dtype=float)
    vertices, tri, _, _ = _renumber(vertices, tri)
    tri = _orient_ccw(vertices, tri)
    be = _boundary_edges(tri)
    markers = np.full(len(be), int(Marker.INTERFACE_GAMMA), dtype=np.int64)
    if h_target is None:
        h_target = r / rings
    return Mesh2D(vertices, tri, be, markers, np.zeros((0, 2), dtype=np.int64),
                  float(h_target), tuple(float(c) for c in center), float(r))


def build_disk_mesh(r: float, H_m: float, center=(0.0, 0.0)) -> Mesh2D:
    """Reference micro disk of radius ``r`` with ``ceil(r / H_m)`` rings."""
    if not r > 0.0:
        raise MeshError("radius must be positive")
    if not (0.0 < H_m < r):
        raise MeshError(f"disk mesh size must satisfy 0 < H_m < r, got H_m={H_m}, r={r}")
    rings = math.ceil(r / H_m - 1e-12)
    return disk_mesh_rings(r, rings, center, h_target=H_m)


# -- perforated periodic cell --------------------------------------------------

CELL_CENTER = (0.5, 0.5)
MIN_INTERFACE_VERTICES = 16


def build_perforated_cell_mesh(rho: float, H_cell: float, *, return_snap_info: bool = False):
    """Mesh of the unit cell minus the centered disk of radius ``rho``.

    A crossed background grid is cut along the circle: for every edge that
    crosses it, the outside endpoint is projected onto the circle, and every
    triangle with a vertex strictly inside the disk is dropped.  Outer
    boundary vertices are paired periodically.
    """
    if not (H_cell > 0.0):
        raise MeshError("cell mesh size must be positive")
    if rho >= 0.5 - 2.0 * H_cell:
        raise HoleTooLarge(f"hole radius {rho} leaves no resolvable gap at H_cell={H_cell}")
    if rho <= 2.0 * H_cell:
        raise HoleUnresolved(f"hole radius {rho} is below two cells at H_cell={H_cell}")
    n = math.ceil(1.0 / H_cell - 1e-9)
    v, t = unit_square_mesh(n, "crossed")
    c = np.asarray(CELL_CENTER)
    dist = np.hypot(v[:, 0] - c[0], v[:, 1] - c[1]) - rho
    inside = dist < 0.0

    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    crossing = inside[e[:, 0]] != inside[e[:, 1]]
    ends = e[crossing]
    outer_end = np.where(inside[ends[:, 0]], ends[:, 1], ends[:, 0])
    snap = np.zeros(len(v), dtype=bool)
    snap[outer_end] = True

    pre_min = float(np.min(_areas(v, t)))
    vs = v.copy()
    d = vs[snap] - c
    vs[snap] = c + rho * d / np.hypot(d[:, 0], d[:, 1])[:, None]
    keep = ~inside[t].any(axis=1) & ~snap[t].all(axis=1)
    t = t[keep]
    post_min = float(np.min(_areas(vs, t)))

    vs, t, new_index, old_of_new = _renumber(vs, t)
    t = _orient_ccw(vs, t)
    be = _boundary_edges(t)
    outer = _square_markers(vs, be)
    markers = np.where(outer, int(Marker.OUTER_SQUARE), int(Marker.INTERFACE_GAMMA)).astype(np.int64)
    pairs = _periodic_pairs(vs, vs[np.unique(be[outer].ravel())], np.unique(be[outer].ravel()))
    mesh = Mesh2D(vs, t, be, markers, pairs, float(H_cell), CELL_CENTER, float(rho))
    n_iface = len(mesh.interface_vertices())
    if n_iface < MIN_INTERFACE_VERTICES:
        raise HoleUnresolved(f"only {n_iface} interface vertices for rho={rho}, H_cell={H_cell}")
    if return_snap_info:
        return mesh, {"pre_min_area": pre_min, "post_min_area": post_min,
                      "snapped": int(snap[old_of_new].sum())}
    return mesh


def _areas(v, t):
    p = v[t]
    return 0.5 * np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))


def _periodic_pairs(vertices, boundary_xy, boundary_idx, tol=1e-12):
    """(master, slave) pairs: x=0 -> x=1 and y=0 -> y=1.

    Corners chain as (00, 10), (00, 01), (10, 11), so the root of every corner
    is the (0, 0) vertex.
    """
    key = {}
    for i, (x, y) in zip(boundary_idx, boundary_xy):
        key[(round(x * 1e9), round(y * 1e9))] = int(i)

    def find(x, y):
        return key.get((round(x * 1e9), round(y * 1e9)))

    pairs = []
    for i, (x, y) in zip(boundary_idx, boundary_xy):
        at_x0 = abs(x) < tol
        at_y0 = abs(y) < tol
        at_x1 = abs(x - 1.0) < tol
        corner = (at_x0 or at_x1) and (at_y0 or abs(y - 1.0) < tol)
        if corner:
            continue
        if at_x0:
            j = find(1.0, y)
            if j is None:
                raise MeshError(f"no periodic partner for ({x}, {y})")
            pairs.append((int(i), j))
        elif at_y0:
            j = find(x, 1.0)
            if j is None:
                raise MeshError(f"no periodic partner for ({x}, {y})")
            pairs.append((int(i), j))
    c00, c10, c01, c11 = find(0, 0), find(1, 0), find(0, 1), find(1, 1)
    pairs += [(c00, c10), (c00, c01), (c10, c11)]
    return np.array(sorted(pairs), dtype=np.int64)


# -- validation and text dump --------------------------------------------------

def check_mesh(mesh: Mesh2D, analytic_area: float | None = None, area_constant: float = 5.0) -> list[str]:
    """Return a list of violated invariants (empty when the mesh is valid)."""
    problems = []
    areas = mesh.signed_areas()
    if areas.min() <= 0.0:
        problems.append(f"non-positive triangle area {areas.min():.3e}")
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    if not used.all():
        problems.append(f"{(~used).sum()} orphan vertices")
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    _, counts = np.unique(_edge_keys(e), return_counts=True)
    if counts.max() > 2:
        problems.append("edge shared by more than two triangles")
    n_bnd = int((counts == 1).sum())
    if n_bnd != len(mesh.boundary_edges):
        problems.append("boundary edge list inconsistent with adjacency")
    for m, s in mesh.periodic_pairs:
        d = mesh.vertices[s] - mesh.vertices[m]
        if not (np.allclose(d, (1.0, 0.0), atol=1e-12) or np.allclose(d, (0.0, 1.0), atol=1e-12)):
            problems.append(f"periodic pair ({m}, {s}) offset {d}")
            break
    if mesh.radius > 0.0:
        iv = mesh.interface_vertices()
        rr = np.hypot(*(mesh.vertices[iv] - np.asarray(mesh.center)).T)
        if len(iv) and np.abs(rr - mesh.radius).max() > 0.25 * mesh.h_target:
            problems.append("interface vertex off the circle")
    if analytic_area is not None:
        defect = abs(areas.sum() - analytic_area)
        if defect > area_constant * mesh.h_target**2:
            problems.append(f"area defect {defect:.3e} exceeds {area_constant}*h^2")
    return problems


def dump_mesh(mesh: Mesh2D, path) -> None:
    """Write the plain-text ``v/t/b/p`` record format."""
    with open(path, "w") as fh:
        for x, y in mesh.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"t {i} {j} {k}\n")
        for (i, j), m in zip(mesh.boundary_edges, mesh.boundary_markers):
            fh.write(f"b {i} {j} {Marker(int(m)).name}\n")
        for i, j in mesh.periodic_pairs:
            fh.write(f"p {i} {j}\n")


def load_mesh(path, h_target: float = 0.0, center=(0.0, 0.0), radius: float = 0.0) -> Mesh2D:
    v, t, b, m, p = [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                v.append((float(parts[1]), float(parts[2])))
            elif tag == "t":
                t.append(tuple(int(x) for x in parts[1:4]))
            elif tag == "b":
                b.append((int(parts[1]), int(parts[2])))
                m.append(int(Marker[parts[3]]))
            elif tag == "p":
                p.append((int(parts[1]), int(parts[2])))
            else:
                raise MeshError(f"unknown record {tag!r}")
    return Mesh2D(np.array(v, dtype=float).reshape(-1, 2), np.array(t, dtype=np.int64).reshape(-1, 3),
                  np.array(b, dtype=np.int64).reshape(-1, 2), np.array(m, dtype=np.int64),
                  np.array(p, dtype=np.int64).reshape(-1, 2), h_target, center, radius)
