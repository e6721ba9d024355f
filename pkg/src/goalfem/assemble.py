"""Assembly of forms and solution of the discrete primal and dual problems.

Integrands are interpreted at quadrature points. Every evaluated value is an
array with leading axes ``(cells, test, trial, points)`` (singleton where an
argument is absent), followed by ``(2,)`` for vector values.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import (Argument, CellwiseConstant, Coefficient, Constant, Div, Expression,
                    FacetNormal, Form, FormError, Grad, Inner, Power, Product,
                    SpatialCoordinate, Sum, derivative, estimate_degree, expand, traverse)
from .reference import MAX_QUADRATURE_DEGREE, edge_points, line_rule, triangle_rule
from .space import constraints

log = logging.getLogger(__name__)

CHUNK = 2048


class SolverError(RuntimeError):
    """Factorization or iteration failure; the message names the system."""


class NewtonError(SolverError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


# -- tabulation -------------------------------------------------------------------------

class _Batch:
    """Geometry and quadrature data for a batch of cells at common reference points."""

    def __init__(self, mesh, cells, ref_points, weights, scale, normal=None):
        self.mesh = mesh
        self.cells = cells
        self.ref = ref_points
        self.weights = weights
        self.scale = scale
        self.normal = normal
        self.kinv = mesh.inverse_jacobians[cells]
        x0 = mesh.vertices[mesh.cells[cells, 0]]
        self.x = x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[cells], ref_points)
        self._cache = {}

    def basis(self, polys, need):
        """Values (nc, nb, nq), gradients (nc, nb, nq, 2), Hessians (nc, nb, nq, 2, 2)."""
        key = (id(polys), need)
        if key not in self._cache:
            tab = polys.tabulate(self.ref, nderiv=need)
            if need == 0:
                tab = (tab,)
            out = [np.broadcast_to(tab[0], (len(self.cells),) + tab[0].shape)]
            if need >= 1:
                out.append(np.einsum("cji,bqj->cbqi", self.kinv, tab[1]))
            if need >= 2:
                out.append(np.einsum("cji,bqjl,clk->cbqik", self.kinv, tab[2], self.kinv))
            self._cache[key] = out
        return self._cache[key]

    def coefficient(self, fn, need):
        key = ("coef", id(fn), need)
        if key not in self._cache:
            if fn.space.mesh is not self.mesh:
                raise FormError("coefficient lives on a different mesh")
            tab = self.basis(fn.space.element, need)
            c = fn.vector[fn.space.dofmap[self.cells]]
            out = [np.einsum("cb,cbq->cq", c, tab[0])]
            if need >= 1:
                out.append(np.einsum("cb,cbqi->cqi", c, tab[1]))
            if need >= 2:
                out.append(np.einsum("cb,cbqik->cqik", c, tab[2]))
            self._cache[key] = out
        return self._cache[key]


def _need(expr):
    """Highest derivative order needed per terminal."""
    need = {}

    def visit(n, order):
        if isinstance(n, Div):
            visit(n.operand.operand, 2)
        elif isinstance(n, Grad):
            visit(n.operand, max(order, 1))
        elif not n.children():
            need[n] = max(need.get(n, 0), order)
        else:
            for c in n.children():
                visit(c, order)
    visit(expr, 0)
    return need


class _Evaluator:
    def __init__(self, batch, test, trial, need):
        self.b = batch
        self.test = test
        self.trial = trial
        self.need = need
        self.memo = {}

    def _arg_tab(self, node):
        polys = self.test if node.role == "test" else self.trial
        if polys is None:
            raise FormError(f"no basis supplied for the {node.role} function")
        return self.b.basis(polys, self.need.get(node, 0))

    def _place(self, arr, role, vector_axes):
        # arr: (nc, nb, nq, *v) -> (nc, I, J, nq, *v)
        if role == "test":
            return arr[:, :, None]
        return arr[:, None, :]

    def terminal(self, n, order):
        """Value (order 0), gradient (1) or Hessian trace (2) of a terminal."""
        if isinstance(n, Argument):
            tab = self._arg_tab(n)
            a = tab[order] if order < 2 else np.einsum("cbqii->cbq", tab[2])
            return self._place(a, n.role, order == 1)
        if isinstance(n, Coefficient):
            tab = self.b.coefficient(n.function, self.need.get(n, 0))
            a = tab[order] if order < 2 else np.einsum("cqii->cq", tab[2])
            return a[:, None, None]
        if isinstance(n, Expression):
            if order == 0:
                v = np.asarray(n.func(self.b.x), dtype=float)
            elif order == 1:
                v = np.asarray(n.gradient(self.b.x), dtype=float)
            else:
                raise FormError("second derivatives of Expressions are not supported")
            return v[:, None, None]
        if isinstance(n, CellwiseConstant):
            vals = np.asarray(n.values, dtype=float)[self.b.cells]
            return vals[:, None, None, None]
        if isinstance(n, SpatialCoordinate):
            return self.b.x[:, None, None]
        if isinstance(n, FacetNormal):
            if self.b.normal is None:
                raise FormError("FacetNormal used in a cell integral")
            return self.b.normal[:, None, None, None, :]
        if isinstance(n, Constant):
            return np.array(n.value) if n.shape else n.value
        raise FormError(f"cannot evaluate {type(n).__name__}")

    def __call__(self, n):
        key = id(n)
        if key in self.memo:
            return self.memo[key][1]
        v = self._eval(n)
        self.memo[key] = (n, v)
        return v

    def _eval(self, n):
        if isinstance(n, Grad):
            return self.terminal(n.operand, 1)
        if isinstance(n, Div):
            return self.terminal(n.operand.operand, 2)
        if not n.children():
            return self.terminal(n, 0)
        if isinstance(n, Sum):
            out = self(n.terms[0])
            for t in n.terms[1:]:
                out = out + self(t)
            return out
        if isinstance(n, Product):
            a, b = self(n.left), self(n.right)
            if n.right.shape and np.ndim(a) > 0:
                a = a[..., None]
            return a * b
        if isinstance(n, Inner):
            a, b = self(n.left), self(n.right)
            return np.sum(a * b, axis=-1)
        if isinstance(n, Power):
            return self(n.base) ** n.exponent
        raise FormError(f"cannot evaluate {type(n).__name__}")


def _quadrature_degree(form, test, trial, qdeg):
    if qdeg is not None:
        return int(qdeg)
    degs = {}
    if test is not None:
        degs["test"] = test.degree
    if trial is not None:
        degs["trial"] = trial.degree
    d = max(estimate_degree(i.integrand, degs) for i in form.integrals)
    return min(d, MAX_QUADRATURE_DEGREE)


def integrate_local(form, mesh, test=None, trial=None, quadrature_degree=None, cells=None):
    """Per-cell element tensors of ``form``.

    ``test`` / ``trial`` are reference :class:`~goalfem.reference.PolySet`
    bases standing in for the form's arguments. Returns a list of blocks
    ``(cell_ids, tensor)`` where ``tensor`` has shape ``(n, ni, nj)``; cell
    integrals come first, followed by exterior-facet integrals grouped by
    local edge.
    """
    qd = _quadrature_degree(form, test, trial, quadrature_degree)
    all_cells = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    blocks = []
    cell_itg = [expand(i.integrand) for i in form.integrals if i.kind == "cell"]
    facet_itg = [(expand(i.integrand), i.marker) for i in form.integrals if i.kind == "exterior_facet"]
    if cell_itg:
        rule = triangle_rule(qd)
        for s in range(0, len(all_cells), CHUNK):
            cs = all_cells[s:s + CHUNK]
            batch = _Batch(mesh, cs, rule.points, rule.weights, mesh.detj[cs])
            blocks.append((cs, _integrate(batch, cell_itg, test, trial)))
    if facet_itg:
        rule = line_rule(qd)
        bf = mesh.boundary_facets
        fcells, fedges = mesh.facet_cells[bf, 0], mesh.facet_local[bf, 0]
        fmark = mesh.facet_markers[bf]
        in_set = np.isin(fcells, all_cells)
        markers = sorted({m for _, m in facet_itg}, key=lambda m: (m is not None, m))
        for e in range(3):
            pts = edge_points(e, rule.points)
            for m in markers:
                sel = in_set & (fedges == e)
                if m is not None:
                    sel &= np.isin(fmark, np.atleast_1d(m))
                cs = fcells[sel]
                if cs.size == 0:
                    continue
                itgs = [ex for ex, mk in facet_itg if mk == m]
                for s in range(0, len(cs), CHUNK):
                    cc = cs[s:s + CHUNK]
                    batch = _Batch(mesh, cc, pts, rule.weights, mesh.edge_lengths[cc, e],
                                   normal=mesh.normals[cc, e])
                    blocks.append((cc, _integrate(batch, itgs, test, trial)))
    return blocks


def _integrate(batch, integrands, test, trial):
    nc = len(batch.cells)
    ni = 1 if test is None else len(test)
    nj = 1 if trial is None else len(trial)
    nq = len(batch.weights)
    total = np.zeros((nc, ni, nj))
    for e in integrands:
        ev = _Evaluator(batch, test, trial, _need(e))
        v = np.broadcast_to(ev(e), (nc, ni, nj, nq))
        total += np.einsum("cijq,q->cij", v, batch.weights) * batch.scale[:, None, None]
    return total


# -- global assembly -------------------------------------------------------------------------

def assemble(form, test_space=None, trial_space=None, quadrature_degree=None):
    """Assemble ``form`` into a scalar, vector, or CSR matrix according to its arity.

    ``test_space`` / ``trial_space`` override the spaces of the form's
    arguments (same mesh required), e.g. to test a residual against a
    higher-degree space.
    """
    if not isinstance(form, Form):
        raise FormError("assemble() needs a Form")
    args = form.arguments
    Vt = test_space or (args["test"].space if "test" in args else None)
    Vu = trial_space or (args["trial"].space if "trial" in args else None)
    if "test" in args and Vt is None or "trial" in args and Vu is None:
        raise FormError("missing argument space")
    mesh = _form_mesh(form, Vt, Vu)
    test = Vt.element if "test" in args else None
    trial = Vu.element if "trial" in args else None
    blocks = integrate_local(form, mesh, test, trial, quadrature_degree)
    if form.arity == 0:
        return float(sum(t.sum() for _, t in blocks))
    if form.arity == 1:
        out = np.zeros(Vt.dim)
        for cs, t in blocks:
            out += np.bincount(Vt.dofmap[cs].ravel(), weights=t[:, :, 0].ravel(), minlength=Vt.dim)
        return out
    rows, cols, vals = [], [], []
    for cs, t in blocks:
        r = Vt.dofmap[cs]
        c = Vu.dofmap[cs]
        rows.append(np.broadcast_to(r[:, :, None], t.shape).ravel())
        cols.append(np.broadcast_to(c[:, None, :], t.shape).ravel())
        vals.append(t.ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(Vt.dim, Vu.dim)).tocsr()
    A.sum_duplicates()
    return A


def _form_mesh(form, Vt, Vu):
    for V in (Vt, Vu):
        if V is not None:
            return V.mesh
    for c in form.coefficients():
        return c.space.mesh
    for itg in form.integrals:
        for n in traverse(itg.integrand):
            if isinstance(n, CellwiseConstant) and n.mesh is not None:
                return n.mesh
    raise FormError("cannot infer the mesh of a form without arguments or coefficients")


def assemble_functional(form, mesh):
    """Assemble a functional that has no coefficients (e.g. an area)."""
    blocks = integrate_local(form, mesh)
    return float(sum(t.sum() for _, t in blocks))


def export_coo(A, path):
    """Write a sparse matrix as ``i j value`` lines."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(A.row.tolist(), A.col.tolist(), A.data.tolist()):
            fh.write(f"{i} {j} {v!r}\n")


# -- linear systems --------------------------------------------------------------------------

@dataclass
class LinearSystem:
    """Matrix, right-hand side, and constrained dofs with their values."""

    matrix: sp.spmatrix
    rhs: np.ndarray
    dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "linear"
    applied: bool = False

    @classmethod
    def from_bcs(cls, matrix, rhs, bcs=(), name="linear", homogeneous=False):
        dofs, vals = constraints(bcs)
        if homogeneous:
            vals = np.zeros_like(vals)
        return cls(sp.csr_matrix(matrix), np.asarray(rhs, dtype=float), dofs, vals, name)

    def apply_constraints(self):
        """Symmetric elimination: zero constrained rows/columns, unit diagonal,
        known values moved to the right-hand side."""
        if self.applied:
            return self
        n = self.matrix.shape[0]
        g = np.zeros(n)
        g[self.dofs] = self.values
        b = self.rhs - self.matrix @ g
        free = np.ones(n)
        free[self.dofs] = 0.0
        D = sp.diags(free)
        A = (D @ self.matrix @ D).tocsr()
        A = A + sp.diags(1.0 - free)
        b[self.dofs] = self.values
        A.sum_duplicates()
        return LinearSystem(A.tocsr(), b, self.dofs, self.values, self.name, True)


def solve_linear(system, method="direct", tol=1e-12):
    """Solve a constrained system; ``method`` is ``'direct'`` or ``'cg'``."""
    s = system.apply_constraints()
    A, b = s.matrix, s.rhs
    if A.shape[0] != A.shape[1]:
        raise SolverError(f"{s.name} system matrix is not square")
    if method == "direct":
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"{s.name} system is singular: {exc}") from None
        x = lu.solve(b)
    elif method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError(f"{s.name} system is not positive definite")
        M = sp.diags(1.0 / d)
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=M, maxiter=10 * A.shape[0])
        if info != 0:
            raise SolverError(f"{s.name} system: conjugate gradients did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{s.name} system is singular (non-finite solution)")
    nb = np.linalg.norm(b)
    if nb > 0 and np.linalg.norm(A @ x - b) > 1e-8 * nb:
        raise SolverError(f"{s.name} system is numerically singular")
    return x


# -- Newton ---------------------------------------------------------------------------------

@dataclass
class NewtonResult:
    solution: object
    iterations: int
    residuals: list


def solve_newton(F, u, bcs=(), tol_rel=1e-10, max_iter=25, atol=0.0, J=None, name="primal",
                 step_tol=0.0):
    """Full-step Newton iteration for ``F(u; v) = 0``.

    Boundary values are imposed on ``u`` first so all increments are
    homogeneous. Converged when the residual 2-norm over unconstrained dofs
    drops below ``max(tol_rel * r0, atol)``, or when an increment is no
    larger than ``step_tol * |u|`` (the residual is then at round-off).
    ``u`` is updated in place.
    """
    for bc in bcs:
        bc.apply(u)
    if J is None:
        J = derivative(F, u)
    dofs, _ = constraints(bcs)
    history = []
    for k in range(max_iter + 1):
        b = assemble(F)
        b[dofs] = 0.0
        history.append(float(np.linalg.norm(b)))
        r0 = history[0]
        if history[-1] <= max(tol_rel * r0, atol):
            return NewtonResult(u, k, history)
        if k == max_iter:
            break
        A = assemble(J)
        sys = LinearSystem(A, -b, dofs, np.zeros(len(dofs)), name)
        du = solve_linear(sys)
        u.vector += du
        log.debug("newton %d: |F| = %.3e", k, history[-1])
        if step_tol and np.linalg.norm(du) <= step_tol * np.linalg.norm(u.vector):
            b = assemble(F)
            b[dofs] = 0.0
            history.append(float(np.linalg.norm(b)))
            return NewtonResult(u, k + 1, history)
    raise NewtonError(f"Newton did not converge in {max_iter} iterations; residuals {history}", history)
