"""Continuous Lagrange spaces on triangle meshes.

Global dofs are numbered vertices first, then ``degree - 1`` dofs per facet
(in canonical facet order, running from the lower to the higher vertex
index), then interior dofs cell by cell.
"""
import csv
from functools import cached_property

import numpy as np

from .forms import Coefficient, Operand
from .mesh import MeshError, barycentric
from .reference import edge_vertices, lagrange_basis


class FunctionSpace:
    """Degree-``degree`` continuous Lagrange space on ``mesh``."""

    def __init__(self, mesh, degree=1):
        if int(degree) != degree or not 1 <= degree <= 4:
            raise ValueError("Lagrange degree must be 1, 2, 3 (or 4 for extrapolation)")
        self.mesh = mesh
        self.degree = int(degree)
        self.element = lagrange_basis(self.degree)
        self._build_dofmap()

    def _build_dofmap(self):
        mesh, p = self.mesh, self.degree
        nv, nf, nc = mesh.num_vertices, mesh.num_facets, mesh.num_cells
        ne, ni = p - 1, (p - 1) * (p - 2) // 2
        nb = len(self.element)
        dm = np.empty((nc, nb), dtype=np.int64)
        dm[:, :3] = mesh.cells
        col = 3
        for e in range(3):
            a, b = edge_vertices(e)
            f = mesh.cell_facets[:, e]
            forward = mesh.cells[:, a] < mesh.cells[:, b]
            for k in range(ne):
                kk = np.where(forward, k, ne - 1 - k)
                dm[:, col + k] = nv + f * ne + kk
            col += ne
        for k in range(ni):
            dm[:, col + k] = nv + nf * ne + np.arange(nc) * ni + k
        self.dofmap = dm
        self.dofmap.flags.writeable = False
        self.dim = nv + nf * ne + nc * ni

    @cached_property
    def dof_coordinates(self):
        x = np.empty((self.dim, 2))
        nodes = self.element.nodes
        J = self.mesh.jacobians
        x0 = self.mesh.vertices[self.mesh.cells[:, 0]]
        phys = x0[:, None, :] + np.einsum("cij,nj->cni", J, nodes)
        x[self.dofmap.ravel()] = phys.reshape(-1, 2)
        # vertex dofs are copied exactly
        x[: self.mesh.num_vertices] = self.mesh.vertices
        return x

    def boundary_dofs(self, marker=None):
        """Sorted dofs on boundary facets carrying ``marker`` (all if None)."""
        mesh = self.mesh
        facets = mesh.boundary_facets
        if marker is not None:
            markers = np.atleast_1d(marker)
            facets = facets[np.isin(mesh.facet_markers[facets], markers)]
        ne = self.degree - 1
        dofs = [mesh.facets[facets].ravel()]
        if ne:
            nv = mesh.num_vertices
            dofs.append((nv + facets[:, None] * ne + np.arange(ne)).ravel())
        return np.unique(np.concatenate(dofs))

    def same_mesh(self, other):
        return self.mesh is other.mesh

    def __repr__(self):
        return f"FunctionSpace(P{self.degree}, dim={self.dim})"


class FEFunction(Operand):
    """Coefficient vector over a :class:`FunctionSpace`. Usable inside forms."""

    def __init__(self, space, vector=None, name=None):
        self.space = space
        if vector is None:
            vector = np.zeros(space.dim)
        vector = np.array(vector, dtype=float)
        if vector.shape != (space.dim,):
            raise ValueError(f"coefficient vector has length {vector.shape}, space dimension is {space.dim}")
        if not np.all(np.isfinite(vector)):
            raise ValueError("coefficient vector has non-finite entries")
        self.vector = vector
        self.name = name

    def __expr__(self):
        return Coefficient(self)

    def copy(self):
        return FEFunction(self.space, self.vector.copy(), self.name)

    def __call__(self, point, cell=None):
        return evaluate(self, cell, point) if cell is not None else evaluate_at(self, point)

    def __repr__(self):
        return f"FEFunction({self.space!r}{'' if self.name is None else ', ' + repr(self.name)})"


def _reference_point(mesh, cell, point, tol=1e-12):
    lam = barycentric(mesh, cell, point)
    if lam.min() < -tol:
        raise MeshError(f"point {tuple(point)} lies outside cell {cell}")
    return lam[1:]


def evaluate(f, cell, point):
    """Value of ``f`` at ``point`` inside ``cell``."""
    ref = _reference_point(f.space.mesh, cell, point)
    vals = f.space.element.tabulate(ref[None])[:, 0]
    return float(f.vector[f.space.dofmap[int(cell)]] @ vals)


def evaluate_gradient(f, cell, point):
    """Gradient of ``f`` at ``point`` inside ``cell``."""
    mesh = f.space.mesh
    ref = _reference_point(mesh, cell, point)
    _, g = f.space.element.tabulate(ref[None], nderiv=1)
    gref = f.vector[f.space.dofmap[int(cell)]] @ g[:, 0, :]
    return mesh.inverse_jacobians[int(cell)].T @ gref


def locate(mesh, point, tol=1e-12):
    """Index of a cell containing ``point`` (lowest id), brute force."""
    p = np.asarray(point, dtype=float)
    x = mesh.vertices[mesh.cells]
    lam12 = np.einsum("cij,cj->ci", mesh.inverse_jacobians, p - x[:, 0])
    lam = np.column_stack([1 - lam12.sum(1), lam12])
    hits = np.flatnonzero(lam.min(axis=1) >= -tol)
    if hits.size == 0:
        raise MeshError(f"point {tuple(p)} is outside the mesh")
    return int(hits[0])


def evaluate_at(f, point):
    return evaluate(f, locate(f.space.mesh, point), point)


def interpolate(source, space):
    """Nodal interpolation of ``source`` into ``space``.

    ``source`` may be an :class:`FEFunction` on the same mesh, or a callable
    mapping points of shape (n, 2) to values of shape (n,).
    """
    if isinstance(source, FEFunction):
        if source.space.mesh is not space.mesh:
            raise MeshError("interpolate() needs both spaces on the same mesh")
        if source.space is space:
            return source.copy()
        tab = source.space.element.tabulate(space.element.nodes)  # (nbW, nbV)
        local = source.vector[source.space.dofmap] @ tab
        out = np.empty(space.dim)
        out[space.dofmap.ravel()] = local.ravel()
        return FEFunction(space, out)
    vals = np.asarray(source(space.dof_coordinates), dtype=float).reshape(space.dim)
    return FEFunction(space, vals)


def transfer(f, space):
    """Interpolate ``f`` onto ``space`` whose mesh was refined from ``f``'s mesh.

    Uses the cell lineage recorded by refinement, so no point search is needed.
    """
    old, new = f.space.mesh, space.mesh
    if old is new:
        return interpolate(f, space)
    if new.parent is None:
        raise MeshError("target mesh has no lineage to the source mesh")
    parent = new.parent
    nodes = space.element.nodes
    x0 = new.vertices[new.cells[:, 0]]
    phys = x0[:, None, :] + np.einsum("cij,nj->cni", new.jacobians, nodes)
    ox0 = old.vertices[old.cells[parent, 0]]
    ref = np.einsum("cij,cnj->cni", old.inverse_jacobians[parent], phys - ox0[:, None, :])
    out = np.empty(space.dim)
    el = f.space.element
    coeffs = f.vector[f.space.dofmap[parent]]
    for c in range(new.num_cells):
        out[space.dofmap[c]] = coeffs[c] @ el.tabulate(ref[c])
    return FEFunction(space, out)


def apply_dirichlet(space, marker, g):
    """Dofs on facets tagged ``marker`` paired with ``g`` evaluated there.

    Returns a list of ``(dof, value)`` in ascending dof order. ``g`` is a
    number or a callable of points (n, 2).
    """
    if marker is not None and marker not in set(space.mesh.facet_markers[space.mesh.boundary_facets].tolist()):
        raise ValueError(f"no boundary facet carries marker {marker}")
    dofs = space.boundary_dofs(marker)
    if callable(g):
        vals = np.asarray(g(space.dof_coordinates[dofs]), dtype=float).reshape(len(dofs))
    else:
        vals = np.full(len(dofs), float(g))
    return list(zip(dofs.tolist(), vals.tolist()))


class DirichletBC:
    """Essential boundary condition ``u = g`` on facets tagged ``marker``."""

    def __init__(self, space, value, marker):
        self.space = space
        self.value = value
        self.marker = marker
        pairs = apply_dirichlet(space, marker, value)
        self.dofs = np.array([d for d, _ in pairs], dtype=np.int64)
        self.values = np.array([v for _, v in pairs])

    def homogenize(self):
        return DirichletBC(self.space, 0.0, self.marker)

    def apply(self, f):
        """Impose the boundary values on ``f`` in place."""
        f.vector[self.dofs] = self.values
        return f


def constraints(bcs):
    """Merge boundary conditions into (dofs, values); later conditions win."""
    table = {}
    for bc in bcs:
        table.update(zip(bc.dofs.tolist(), bc.values.tolist()))
    dofs = np.array(sorted(table), dtype=np.int64)
    return dofs, np.array([table[d] for d in dofs.tolist()])


def export_csv(f, path):
    """Write ``dof_index,x,y,value`` rows."""
    x = f.space.dof_coordinates
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dof_index", "x", "y", "value"])
        for i in range(f.space.dim):
            w.writerow([i, repr(float(x[i, 0])), repr(float(x[i, 1])), repr(float(f.vector[i]))])
