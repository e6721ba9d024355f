"""Conforming triangle meshes with newest-vertex bisection.

A :class:`Mesh` is immutable. Refinement returns a new mesh that records,
for each of its cells, the index of the parent cell it came from.

Example
-------
>>> from goalfem.mesh import unit_square, mark_and_refine
>>> m = unit_square(2)
>>> m2 = mark_and_refine(m, {0})
>>> m2.num_cells > m.num_cells
True
"""
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid or degenerate mesh data."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


class Mesh:
    """Two-dimensional conforming simplicial mesh.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : array_like, shape (nc, 3)
        Counter-clockwise vertex triples.
    boundary_markers : mapping or array_like, optional
        Either ``{(v0, v1): marker}`` or rows ``(v0, v1, marker)``. Boundary
        facets that are not listed get marker 0.
    refinement_edge : array_like, optional
        Local edge index used by bisection for every cell. Defaults to the
        longest edge (ties: lexicographically smallest vertex pair).
    parent : array_like, optional
        Cell lineage from the mesh this one was refined from.
    """

    def __init__(self, vertices, cells, boundary_markers=None,
                 refinement_edge=None, parent=None):
        self.vertices = _frozen(vertices, float).reshape(-1, 2)
        self.cells = _frozen(cells, np.int64).reshape(-1, 3)
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= len(self.vertices)):
            raise MeshError("cell references a nonexistent vertex")
        self._check_orientation()
        self._build_facets()
        self._set_markers(boundary_markers)
        if refinement_edge is None:
            refinement_edge = self._longest_edges()
        self.refinement_edge = _frozen(refinement_edge, np.int64)
        self.parent = None if parent is None else _frozen(parent, np.int64)

    # -- construction helpers -------------------------------------------------

    def _check_orientation(self):
        v = self.vertices
        if len(self.cells) == 0:
            raise MeshError("mesh has no cells")
        ext = v.max(axis=0) - v.min(axis=0)
        bbox = float(ext[0] * ext[1])
        a = self.signed_areas
        if np.any(a < 1e-14 * bbox):
            bad = int(np.argmin(a))
            raise MeshError(f"cell {bad} is degenerate or clockwise (signed area {a[bad]:.3e})")

    def _build_facets(self):
        c = self.cells
        local = np.array([[1, 2], [2, 0], [0, 1]])
        edges = c[:, local].reshape(-1, 2)
        edges = np.sort(edges, axis=1)
        facets, inverse, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            f = facets[np.argmax(counts)]
            raise MeshError(f"non-manifold facet {tuple(f)} has {counts.max()} incident cells")
        nc = len(c)
        owner = np.repeat(np.arange(nc), 3)
        ledge = np.tile(np.arange(3), nc)
        order = np.lexsort((ledge, owner, inverse))
        facet_cells = -np.ones((len(facets), 2), dtype=np.int64)
        facet_local = -np.ones((len(facets), 2), dtype=np.int64)
        slot = np.zeros(len(facets), dtype=np.int64)
        for k in order:
            f = inverse[k]
            facet_cells[f, slot[f]] = owner[k]
            facet_local[f, slot[f]] = ledge[k]
            slot[f] += 1
        self.facets = _frozen(facets, np.int64)
        self.cell_facets = _frozen(inverse.reshape(nc, 3), np.int64)
        self.facet_cells = _frozen(facet_cells, np.int64)
        self.facet_local = _frozen(facet_local, np.int64)

    def _set_markers(self, boundary_markers):
        is_bnd = self.facet_cells[:, 1] < 0
        markers = np.where(is_bnd, 0, -1).astype(np.int64)
        if boundary_markers is not None:
            items = boundary_markers.items() if hasattr(boundary_markers, "items") else \
                (((r[0], r[1]), r[2]) for r in np.asarray(boundary_markers, dtype=np.int64).reshape(-1, 3))
            index = {tuple(f): i for i, f in enumerate(self.facets.tolist())}
            for (a, b), m in items:
                key = (min(int(a), int(b)), max(int(a), int(b)))
                f = index.get(key)
                if f is None:
                    raise MeshError(f"marked facet {key} is not a mesh facet")
                if not is_bnd[f]:
                    raise MeshError(f"marked facet {key} is an interior facet")
                if int(m) < 0:
                    raise MeshError("boundary markers must be nonnegative")
                markers[f] = int(m)
        self.facet_markers = _frozen(markers, np.int64)

    def _longest_edges(self):
        L = self.edge_lengths
        c = self.cells
        out = np.empty(len(c), dtype=np.int64)
        for i in range(len(c)):
            lmax = L[i].max()
            cand = [e for e in range(3) if L[i, e] >= lmax * (1 - 1e-12)]
            out[i] = min(cand, key=lambda e: tuple(sorted((c[i, (e + 1) % 3], c[i, (e + 2) % 3]))))
        return out

    # -- sizes ------------------------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_facets(self):
        return len(self.facets)

    @cached_property
    def boundary_facets(self):
        """Indices of boundary facets (ascending)."""
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def markers(self):
        """Mapping ``(v0, v1) -> marker`` over boundary facets."""
        return {tuple(self.facets[f].tolist()): int(self.facet_markers[f])
                for f in self.boundary_facets}

    # -- geometry ---------------------------------------------------------------

    @cached_property
    def jacobians(self):
        """Affine map Jacobians J = [x1 - x0, x2 - x0], shape (nc, 2, 2)."""
        x = self.vertices[self.cells]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)

    @cached_property
    def signed_areas(self):
        x = self.vertices[self.cells]
        d1, d2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return self.signed_areas

    @cached_property
    def detj(self):
        return 2.0 * self.signed_areas

    @cached_property
    def inverse_jacobians(self):
        return np.linalg.inv(self.jacobians)

    @cached_property
    def edge_lengths(self):
        """Length of local edge e (opposite vertex e) per cell, shape (nc, 3)."""
        x = self.vertices[self.cells]
        d = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
        return np.hypot(d[..., 0], d[..., 1])

    @cached_property
    def normals(self):
        """Outward unit normal of local edge e per cell, shape (nc, 3, 2)."""
        x = self.vertices[self.cells]
        d = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        return n / self.edge_lengths[..., None]

    def cell_geometry(self, cell):
        """Geometry summary of a single cell as a dict."""
        c = int(cell)
        return {
            "vertices": self.vertices[self.cells[c]].copy(),
            "area": float(self.signed_areas[c]),
            "normals": self.normals[c].copy(),
            "edge_lengths": self.edge_lengths[c].copy(),
            "jacobian": self.jacobians[c].copy(),
        }

    @property
    def total_area(self):
        return float(np.sum(self.signed_areas))

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def barycentric(self, cell, point):
        """Barycentric coordinates of ``point`` with respect to ``cell``."""
        return barycentric(self, cell, point)

    def min_angles(self):
        """Smallest interior angle (radians) of every cell."""
        x = self.vertices[self.cells]
        ang = []
        for i in range(3):
            a = x[:, (i + 1) % 3] - x[:, i]
            b = x[:, (i + 2) % 3] - x[:, i]
            cosv = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            ang.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
        return np.min(ang, axis=0)

    def vertex_cells(self):
        """For every vertex, the sorted array of incident cells."""
        nv = self.num_vertices
        flat = self.cells.ravel()
        owners = np.repeat(np.arange(self.num_cells), 3)
        order = np.lexsort((owners, flat))
        splits = np.searchsorted(flat[order], np.arange(nv + 1))
        return [owners[order[splits[i]:splits[i + 1]]] for i in range(nv)]

    def refine(self, marked):
        return mark_and_refine(self, marked)

    def __repr__(self):
        return f"Mesh(num_vertices={self.num_vertices}, num_cells={self.num_cells})"


def barycentric(mesh, cell, point):
    """Barycentric coordinates (l0, l1, l2) of ``point`` in ``cell``.

    Raises
    ------
    MeshError
        If the cell is degenerate or the point is not finite.
    """
    x = mesh.vertices[mesh.cells[int(cell)]]
    p = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(p)):
        raise MeshError("point must be finite")
    J = np.column_stack([x[1] - x[0], x[2] - x[0]])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    ext = np.ptp(x, axis=0)
    if abs(det) <= 2e-14 * max(ext[0] * ext[1], np.finfo(float).tiny):
        raise MeshError(f"cell {cell} is degenerate")
    l12 = np.linalg.solve(J, p - x[0])
    return np.array([1.0 - l12[0] - l12[1], l12[0], l12[1]])


def facet_adjacency(mesh):
    """Map each facet ``(v0, v1)`` (ascending) to its ``(cell, local_edge)`` pairs.

    Interior facets have two pairs, lower cell id first; boundary facets one.
    """
    out = {}
    for f, (a, b) in enumerate(mesh.facets.tolist()):
        pairs = [(int(c), int(e)) for c, e in zip(mesh.facet_cells[f], mesh.facet_local[f]) if c >= 0]
        out[(a, b)] = pairs
    return out


def check_conformity(mesh):
    """Audit facet adjacency; return True when every facet has one or two cells
    and every facet with one cell lies on the outer boundary (no hanging nodes)."""
    adj = facet_adjacency(mesh)
    if any(len(p) not in (1, 2) for p in adj.values()):
        return False
    # a hanging node shows up as a vertex lying in the interior of a boundary facet
    bnd = [k for k, p in adj.items() if len(p) == 1]
    verts = mesh.vertices
    bverts = np.unique(np.array(bnd).ravel())
    for a, b in bnd:
        pa, pb = verts[a], verts[b]
        d = pb - pa
        L2 = d @ d
        q = verts[bverts] - pa
        t = q @ d / L2
        dist = np.abs(q[:, 0] * d[1] - q[:, 1] * d[0]) / np.sqrt(L2)
        inside = (t > 1e-12) & (t < 1 - 1e-12) & (dist < 1e-12 * np.sqrt(L2))
        if np.any(inside):
            return False
    return True


def mark_and_refine(mesh, marked):
    """Newest-vertex bisection of the ``marked`` cells with conforming closure.

    Every marked cell is bisected at least once. Other cells are bisected
    only where needed to avoid hanging nodes. Existing vertices keep their
    indices and coordinates; new vertices are appended.
    """
    marked = sorted({int(c) for c in marked})
    nc = mesh.num_cells
    if marked and (marked[0] < 0 or marked[-1] >= nc):
        raise MeshError("marked cell id out of range")
    if not marked:
        return Mesh(mesh.vertices, mesh.cells, mesh.markers,
                    refinement_edge=mesh.refinement_edge, parent=np.arange(nc))

    r = mesh.refinement_edge
    cells = mesh.cells
    rot = [(int(c[k]), int(c[(k + 1) % 3]), int(c[(k + 2) % 3])) for c, k in zip(cells, r)]

    def key(a, b):
        return (a, b) if a < b else (b, a)

    edge_cells = {}
    for i, (a, b, c) in enumerate(rot):
        for e in (key(b, c), key(c, a), key(a, b)):
            edge_cells.setdefault(e, []).append(i)
    refedge = [key(b, c) for (_, b, c) in rot]

    marked_edges = set()
    stack = []
    for i in marked:
        e = refedge[i]
        if e not in marked_edges:
            marked_edges.add(e)
            stack.append(e)
    while stack:
        e = stack.pop()
        for i in edge_cells[e]:
            re = refedge[i]
            if re not in marked_edges:
                marked_edges.add(re)
                stack.append(re)

    verts = [mesh.vertices]
    mid = {}
    nv = mesh.num_vertices
    new_pts = []
    for k, (a, b) in enumerate(sorted(marked_edges)):
        mid[(a, b)] = nv + k
        new_pts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
    if new_pts:
        verts.append(np.array(new_pts))

    out_cells, out_parent = [], []

    def bisect(tri, parent):
        a, b, c = tri
        m = mid.get(key(b, c))
        if m is None:
            out_cells.append(tri)
            out_parent.append(parent)
            return
        bisect((m, c, a), parent)
        bisect((m, a, b), parent)

    for i, tri in enumerate(rot):
        bisect(tri, i)

    bmarkers = {}
    for (a, b), mk in mesh.markers.items():
        m = mid.get((a, b))
        if m is None:
            bmarkers[(a, b)] = mk
        else:
            bmarkers[key(a, m)] = mk
            bmarkers[key(m, b)] = mk

    return Mesh(np.vstack(verts), np.array(out_cells), bmarkers,
                refinement_edge=np.zeros(len(out_cells), dtype=np.int64),
                parent=np.array(out_parent))


def refine_uniform(mesh, times=1):
    """Bisect every cell ``times`` times (with closure)."""
    for _ in range(times):
        mesh = mark_and_refine(mesh, range(mesh.num_cells))
    return mesh


# -- generators -----------------------------------------------------------------

def rectangle(x0, y0, x1, y1, nx, ny, markers=(4, 2, 1, 3)):
    """Structured triangulation of a rectangle, each square cut along its
    (x0, y0)-(x1, y1)-parallel diagonal.

    ``markers`` gives the boundary tags for the sides (bottom, right, left, top);
    the default uses 1 = left (x = x0), 2 = right, 3 = top, 4 = bottom.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    bottom, right, left, top = markers
    bm = {}
    for i in range(nx):
        bm[(vid(i, 0), vid(i + 1, 0))] = bottom
        bm[(vid(i, ny), vid(i + 1, ny))] = top
    for j in range(ny):
        bm[(vid(0, j), vid(0, j + 1))] = left
        bm[(vid(nx, j), vid(nx, j + 1))] = right
    return Mesh(verts, cells, bm)


def unit_square(n, m=None):
    """Unit square with ``n`` x ``m`` squares split into 2 triangles each.

    Boundary markers: 1 on x = 0, 2 on x = 1, 3 on y = 1, 4 on y = 0.
    """
    return rectangle(0.0, 0.0, 1.0, 1.0, n, n if m is None else m)


def lshape(n=1):
    """L-shaped domain (-1, 1)^2 minus (0, 1) x (-1, 0).

    Each of the three unit squares is divided into ``n`` x ``n`` squares with
    diagonals pointing away from the re-entrant corner. Boundary marker 1 is
    the side x = -1; marker 2 is the rest of the boundary.
    """
    h = 1.0 / n
    index = {}
    verts = []

    def vid(x, y):
        k = (round(x / h), round(y / h))
        if k not in index:
            index[k] = len(verts)
            verts.append((k[0] * h, k[1] * h))
        return index[k]

    cells = []
    for ox, oy in ((-1.0, -1.0), (-1.0, 0.0), (0.0, 0.0)):
        for j in range(n):
            for i in range(n):
                x, y = ox + i * h, oy + j * h
                a, b, c, d = vid(x, y), vid(x + h, y), vid(x + h, y + h), vid(x, y + h)
                if (x + 0.5 * h) * (y + 0.5 * h) > 0:
                    cells += [(a, b, c), (a, c, d)]
                else:
                    cells += [(a, b, d), (b, c, d)]
    mesh = Mesh(np.array(verts), np.array(cells))
    bm = {}
    for f in mesh.boundary_facets:
        a, b = mesh.facets[f]
        xa, xb = mesh.vertices[a, 0], mesh.vertices[b, 0]
        bm[(int(a), int(b))] = 1 if (abs(xa + 1) < 1e-12 and abs(xb + 1) < 1e-12) else 2
    return Mesh(mesh.vertices, mesh.cells, bm)


# -- I/O ----------------------------------------------------------------------------

def write_msh2(mesh, path):
    """Write ``mesh`` in the ``mesh2d 1`` text format."""
    lines = ["mesh2d 1", f"{mesh.num_vertices} {mesh.num_cells} {len(mesh.boundary_facets)}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    for f in mesh.boundary_facets:
        a, b = mesh.facets[f]
        lines.append(f"{a} {b} {mesh.facet_markers[f]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_msh2(path):
    """Read a mesh written by :func:`write_msh2`."""
    tokens = Path(path).read_text().split("\n")
    lines = [t for t in tokens if t.strip()]
    if not lines or lines[0].split() != ["mesh2d", "1"]:
        raise MeshError("not a 'mesh2d 1' file")
    try:
        nv, nc, nb = (int(t) for t in lines[1].split())
        body = lines[2:]
        verts = [tuple(float(t) for t in ln.split()) for ln in body[:nv]]
        cells = [tuple(int(t) for t in ln.split()) for ln in body[nv:nv + nc]]
        bnd = [tuple(int(t) for t in ln.split()) for ln in body[nv + nc:nv + nc + nb]]
    except ValueError as exc:
        raise MeshError(f"malformed mesh file: {exc}") from None
    if len(verts) != nv or len(cells) != nc or len(bnd) != nb:
        raise MeshError("mesh file is truncated")
    if any(len(v) != 2 for v in verts) or any(len(c) != 3 for c in cells) or any(len(b) != 3 for b in bnd):
        raise MeshError("malformed mesh file: wrong number of fields")
    return Mesh(np.array(verts), np.array(cells), np.array(bnd).reshape(-1, 3))


def write_svg(mesh, path, stroke_width=None):
    """Write the mesh as SVG 1.1 with one ``<path>`` per cell."""
    lo, hi = (b.tolist() for b in mesh.bounding_box())
    w, h = hi[0] - lo[0], hi[1] - lo[1]
    sw = float(stroke_width) if stroke_width is not None else 0.002 * max(w, h)
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
           f'viewBox="{lo[0]!r} {-hi[1]!r} {w!r} {h!r}">',
           f'<g fill="none" stroke="black" stroke-width="{sw!r}">']
    for tri in mesh.cells:
        p = mesh.vertices[tri].tolist()
        # flip y so the picture is upright
        d = "M {!r} {!r} L {!r} {!r} L {!r} {!r} Z".format(
            p[0][0], -p[0][1], p[1][0], -p[1][1], p[2][0], -p[2][1])
        out.append(f'<path d="{d}"/>')
    out += ["</g>", "</svg>"]
    Path(path).write_text("\n".join(out) + "\n")
