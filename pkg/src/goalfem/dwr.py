"""Dual-weighted residual error estimation.

The weak residual ``r`` is localized into cell residuals ``R_T`` (degree p
polynomials) and facet residuals ``R_dT|S`` (degree q polynomials on each
facet) by solving small bubble- and cone-weighted problems on each cell.
Together with a patch-wise least-squares extrapolation of the discrete dual
solution this gives the estimate ``eta_h = |r(E z_h)|`` and the cell
indicators used for marking.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assemble import assemble, integrate_local
from .mesh import MeshError, barycentric
from .reference import (PolySet, barycentric_polys, edge_points, edge_vertices,
                        lagrange_basis, line_rule, triangle_rule)
from .space import FEFunction, FunctionSpace, interpolate


class LocalProblemError(MeshError):
    """A local bubble- or cone-weighted system could not be factorized."""


# -- bubble and cone functions ---------------------------------------------------------

def bubble_polys():
    """Cell bubble lambda_0 * lambda_1 * lambda_2 on the reference cell."""
    lam = barycentric_polys()
    return PolySet(lam.coeffs[0]) * PolySet(lam.coeffs[1]) * PolySet(lam.coeffs[2])


def cone_polys(e):
    """Cone function of local edge ``e``: product of the barycentric
    coordinates of the edge's two vertices."""
    a, b = edge_vertices(e)
    lam = barycentric_polys()
    return PolySet(lam.coeffs[a]) * PolySet(lam.coeffs[b])


def facet_polys(e, q):
    """Degree-``q`` basis ``lambda_a**(q-k) * lambda_b**k`` attached to local edge ``e``.

    On the edge (parametrized by ``t = lambda_b``) these restrict to
    ``(1 - t)**(q - k) * t**k``.
    """
    a, b = edge_vertices(e)
    lam = barycentric_polys()
    la, lb = PolySet(lam.coeffs[a]), PolySet(lam.coeffs[b])
    out = []
    for k in range(q + 1):
        p = PolySet(np.ones((1, 1)))
        for _ in range(q - k):
            p = p * la
        for _ in range(k):
            p = p * lb
        out.append(p)
    res = out[0]
    for p in out[1:]:
        res = res.concat(p)
    return res


def bubble(mesh, cell):
    """The cell bubble of ``cell`` as a callable of a physical point."""
    return lambda x: float(np.prod(barycentric(mesh, cell, x)))


def cone(mesh, cell, e):
    """The cone function of local facet ``e`` of ``cell`` as a callable."""
    a, b = edge_vertices(e)

    def beta(x):
        lam = barycentric(mesh, cell, x)
        return float(lam[a] * lam[b])
    return beta


def _edge_basis_values(q, t):
    t = np.asarray(t)
    return np.array([(1 - t) ** (q - k) * t**k for k in range(q + 1)])


# -- localization ------------------------------------------------------------------------

@dataclass
class ResidualRep:
    """Cell and facet residuals of a weak residual.

    Attributes
    ----------
    cell : ndarray (nc, n_p)
        Coefficients of ``R_T`` in the local degree-``p`` Lagrange basis.
    facet : ndarray (nc, 3, q + 1)
        Coefficients of ``R_dT`` on local edge ``e`` in the basis
        ``(1 - t)**(q - k) * t**k``, with ``t`` running from the edge's
        start vertex to its end vertex.
    """

    mesh: object
    p: int
    q: int
    cell: np.ndarray
    facet: np.ndarray

    def cell_value(self, cell, point):
        """R_T evaluated at a physical point of ``cell``."""
        lam = barycentric(self.mesh, cell, point)
        vals = lagrange_basis(self.p).tabulate(lam[None, 1:])[:, 0]
        return float(self.cell[cell] @ vals)

    def facet_value(self, cell, e, t):
        """R_dT on local edge ``e`` of ``cell`` at parameter ``t``."""
        return self.facet[cell, e] @ _edge_basis_values(self.q, t)

    def local_terms(self, w):
        """Per-cell ``<R_T, w>_T`` (nc,) and per-(cell, edge) ``<R_dT, w>_S`` (nc, 3)."""
        W = w.space
        Mix, Fe = _coupling(self.p, self.q, W.degree)
        wl = w.vector[W.dofmap]
        cell_terms = self.mesh.detj * np.einsum("ci,ij,cj->c", self.cell, Mix, wl)
        facet_terms = np.stack([self.mesh.edge_lengths[:, e]
                                * np.einsum("ck,kj,cj->c", self.facet[:, e], Fe[e], wl)
                                for e in range(3)], axis=1)
        return cell_terms, facet_terms

    def residual_vector(self, W):
        """``sum_T <R_T, phi_j>_T + <R_dT, phi_j>_dT`` for every basis function of ``W``."""
        Mix, Fe = _coupling(self.p, self.q, W.degree)
        local = self.mesh.detj[:, None] * (self.cell @ Mix)
        for e in range(3):
            local += self.mesh.edge_lengths[:, e, None] * (self.facet[:, e] @ Fe[e])
        return np.bincount(W.dofmap.ravel(), weights=local.ravel(), minlength=W.dim)


_COUPLING = {}


def _coupling(p, q, w):
    key = (p, q, w)
    if key not in _COUPLING:
        P, Wb = lagrange_basis(p), lagrange_basis(w)
        rule = triangle_rule(p + w)
        Mix = (P.tabulate(rule.points) * rule.weights) @ Wb.tabulate(rule.points).T
        lrule = line_rule(q + w)
        Fe = []
        for e in range(3):
            psi = _edge_basis_values(q, lrule.points)
            phi = Wb.tabulate(edge_points(e, lrule.points))
            Fe.append((psi * lrule.weights) @ phi.T)
        _COUPLING[key] = (Mix, Fe)
    return _COUPLING[key]


def _chol(M, what):
    try:
        return sla.cho_factor(M)
    except sla.LinAlgError:
        raise LocalProblemError(f"{what} is not positive definite (degenerate geometry)") from None


_LOCAL = {}


def _local_operators(p, q):
    """Reference-cell matrices shared by all cells."""
    key = (p, q)
    if key in _LOCAL:
        return _LOCAL[key]
    P = lagrange_basis(p)
    b = bubble_polys()
    btests = b * P
    rule = triangle_rule(3 + 2 * p)
    Pv = P.tabulate(rule.points)
    Mb = (btests.tabulate(rule.points) * rule.weights) @ Pv.T
    ctests, G = [], []
    rule2 = triangle_rule(2 + q + p)
    for e in range(3):
        ct = cone_polys(e) * facet_polys(e, q)
        ctests.append(ct)
        G.append((ct.tabulate(rule2.points) * rule2.weights) @ P.tabulate(rule2.points).T)
    lrule = line_rule(2 * q + 2)
    psi = _edge_basis_values(q, lrule.points)
    H = (psi * lrule.weights * lrule.points * (1 - lrule.points)) @ psi.T
    out = dict(btests=btests, Mb=Mb, Mb_chol=_chol(Mb, "bubble-weighted mass matrix"),
               ctests=ctests, G=G, H_chol=_chol(H, "cone-weighted facet mass matrix"), H=H)
    _LOCAL[key] = out
    return out


def _per_cell(blocks, nc, n):
    out = np.zeros((nc, n))
    for cs, t in blocks:
        np.add.at(out, cs, t[:, :, 0])
    return out


def localize(r, space=None, q=None, quadrature_degree=None):
    """Cell and facet residuals of the linear form ``r``.

    ``space`` fixes the cell residual degree p (default: the degree of
    r's test space); ``q`` defaults to p.
    """
    if r.arity != 1:
        raise ValueError("localize() needs a linear form")
    V = space or r.arguments["test"].space
    mesh, p = V.mesh, V.degree
    q = p if q is None else int(q)
    ops = _local_operators(p, q)
    nc = mesh.num_cells
    n = len(ops["btests"])

    rhs = _per_cell(integrate_local(r, mesh, test=ops["btests"], quadrature_degree=quadrature_degree), nc, n)
    R = sla.cho_solve(ops["Mb_chol"], rhs.T).T / mesh.detj[:, None]

    facet = np.zeros((nc, 3, q + 1))
    for e in range(3):
        ct = ops["ctests"][e]
        rf = _per_cell(integrate_local(r, mesh, test=ct, quadrature_degree=quadrature_degree), nc, len(ct))
        rf -= mesh.detj[:, None] * (R @ ops["G"][e].T)
        facet[:, e] = sla.cho_solve(ops["H_chol"], rf.T).T / mesh.edge_lengths[:, e, None]
    return ResidualRep(mesh, p, q, R, facet)


# -- extrapolation ------------------------------------------------------------------------

def _fit_basis(points, degree, center, scale):
    z = (points - center) / scale
    exps = [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]
    return np.column_stack([z[:, 0] ** a * z[:, 1] ** b for a, b in exps])


def extrapolate(v, target=None):
    """Lift ``v`` (degree p) to degree p + 1 by patchwise least squares.

    For every cell, a degree-(p+1) polynomial is fitted to the values of ``v``
    at the dofs of the cell's vertex patch (grown by one ring when the patch
    has too few dofs or does not determine the fit) and evaluated at the
    cell's target dofs. Target dofs shared between cells are averaged.
    """
    V = v.space
    mesh = V.mesh
    W = target or FunctionSpace(mesh, V.degree + 1)
    if W.mesh is not mesh or W.degree != V.degree + 1:
        raise ValueError("target space must have degree p + 1 on the same mesh")
    deg = W.degree
    n = (deg + 1) * (deg + 2) // 2
    vcells = mesh.vertex_cells()
    xV, xW = V.dof_coordinates, W.dof_coordinates
    acc = np.zeros(W.dim)
    cnt = np.zeros(W.dim)

    def grow(patch):
        verts = np.unique(mesh.cells[patch])
        return np.unique(np.concatenate([vcells[i] for i in verts]))

    for c in range(mesh.num_cells):
        patch = np.unique(np.concatenate([vcells[i] for i in mesh.cells[c]]))
        dofs = np.unique(V.dofmap[patch])
        grown = 0
        if len(dofs) < n:
            patch = grow(patch)
            dofs = np.unique(V.dofmap[patch])
            grown = 1
        while True:
            pts = xV[dofs]
            center = pts.mean(axis=0)
            scale = np.abs(pts - center).max()
            A = _fit_basis(pts, deg, center, scale)
            coef, _, rank, _ = np.linalg.lstsq(A, v.vector[dofs], rcond=None)
            if rank == n:
                break
            if grown >= 2:
                raise ValueError(f"least-squares fit on the patch of cell {c} is rank deficient")
            patch = grow(patch)
            dofs = np.unique(V.dofmap[patch])
            grown += 1
        target_dofs = W.dofmap[c]
        acc[target_dofs] += _fit_basis(xW[target_dofs], deg, center, scale) @ coef
        cnt[target_dofs] += 1
    return FEFunction(W, acc / cnt)


# -- estimate and indicators -----------------------------------------------------------------

def estimate(r, Ez):
    """``eta_h = |r(E z_h)|``."""
    return abs(float(assemble(r, test_space=Ez.space) @ Ez.vector))


@dataclass
class Indicators:
    """Per-cell indicators ``eta`` (>= 0), their signed values, and totals."""

    eta: np.ndarray
    signed: np.ndarray

    @property
    def signed_sum(self):
        return float(np.sum(self.signed))

    @property
    def eta_h(self):
        return abs(self.signed_sum)

    @property
    def total(self):
        return float(np.sum(self.eta))


def indicators(rep, Ez, pi_Ez):
    """Cell indicators ``|<R_T, w>_T + {<R_dT, w>_dT}|`` with ``w = Ez - pi_Ez``.

    Interior facet terms are shared equally between the two incident cells;
    boundary facet terms go to their only cell.
    """
    if pi_Ez.space.mesh is not Ez.space.mesh:
        raise ValueError("Ez and its interpolant must share a mesh")
    w = FEFunction(Ez.space, Ez.vector - interpolate(pi_Ez, Ez.space).vector)
    cell_terms, facet_terms = rep.local_terms(w)
    mesh = rep.mesh
    fc, fl = mesh.facet_cells, mesh.facet_local
    interior = fc[:, 1] >= 0
    own = facet_terms[fc[:, 0], fl[:, 0]]
    other = np.where(interior, facet_terms[np.maximum(fc[:, 1], 0), np.maximum(fl[:, 1], 0)], 0.0)
    share = np.where(interior, 0.5 * (own + other), own)
    signed = cell_terms.copy()
    np.add.at(signed, fc[:, 0], share)
    np.add.at(signed, fc[interior, 1], share[interior])
    return Indicators(np.abs(signed), signed)


def mark_dorfler(eta, alpha=0.5):
    """Smallest set of largest-indicator cells whose sum reaches ``alpha`` of the total.

    Ties are broken by ascending cell id. Returns an empty set when all
    indicators vanish.
    """
    eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if np.any(eta < 0):
        raise ValueError("indicators must be nonnegative")
    order = np.lexsort((np.arange(len(eta)), -eta))
    if alpha >= 1.0:
        return set(np.flatnonzero(eta > 0).tolist())
    cums = np.cumsum(eta[order])
    if len(cums) == 0 or cums[-1] <= 0:
        return set()
    m = int(np.argmax(cums >= alpha * cums[-1])) + 1
    return set(order[:m].tolist())
