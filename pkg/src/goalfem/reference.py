"""Reference-triangle machinery: quadrature rules and polynomial sets.

The reference triangle has vertices (0, 0), (1, 0), (0, 1). Local edge ``e``
is the edge opposite local vertex ``e`` and runs from vertex ``(e + 1) % 3``
to vertex ``(e + 2) % 3``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve2d
from scipy.special import roots_jacobi, roots_legendre

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
MAX_QUADRATURE_DEGREE = 8


def edge_vertices(e):
    """Local vertex pair (start, end) of local edge ``e``."""
    return (e + 1) % 3, (e + 2) % 3


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature rule on the reference triangle (or the unit interval).

    Attributes
    ----------
    points : ndarray, shape (nq, 2) or (nq,)
        Reference coordinates.
    weights : ndarray, shape (nq,)
        Weights; they sum to the reference measure (1/2 or 1).
    degree : int
        Polynomial exactness degree.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self):
        p = np.atleast_2d(self.points)
        return np.column_stack([1.0 - p[:, 0] - p[:, 1], p[:, 0], p[:, 1]])


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss-Jacobi rule on the reference triangle exact to ``degree``."""
    degree = max(int(degree), 0)
    n = degree // 2 + 1
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    s = 0.5 * (xj + 1.0)
    t = 0.5 * (xl + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(0.25 * wj, 0.5 * wl)
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    rule = QuadratureRule(pts, W.ravel(), degree)
    rule.points.flags.writeable = False
    rule.weights.flags.writeable = False
    return rule


@lru_cache(maxsize=None)
def line_rule(degree):
    """Gauss-Legendre rule on [0, 1] exact to ``degree``."""
    n = max(int(degree), 0) // 2 + 1
    x, w = roots_legendre(n)
    rule = QuadratureRule(0.5 * (x + 1.0), 0.5 * w, int(degree))
    rule.points.flags.writeable = False
    rule.weights.flags.writeable = False
    return rule


def edge_points(e, t):
    """Map parameters ``t`` in [0, 1] onto local edge ``e`` of the reference cell."""
    a, b = edge_vertices(e)
    t = np.asarray(t, dtype=float)[:, None]
    return (1.0 - t) * REF_VERTICES[a] + t * REF_VERTICES[b]


class PolySet:
    """A finite set of bivariate polynomials on the reference triangle.

    Each polynomial is stored as a coefficient array ``C[a, c]`` multiplying
    ``xi**a * eta**c``.
    """

    def __init__(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        self.coeffs = coeffs

    def __len__(self):
        return self.coeffs.shape[0]

    @property
    def degree(self):
        nz = np.argwhere(np.abs(self.coeffs) > 0)
        if nz.size == 0:
            return 0
        return int((nz[:, 1] + nz[:, 2]).max())

    def __mul__(self, other):
        """Pairwise product of ``self`` (one polynomial) with every member of ``other``,
        or elementwise when both have equal length."""
        if len(self) == 1:
            prods = [convolve2d(self.coeffs[0], c) for c in other.coeffs]
        elif len(other) == 1:
            prods = [convolve2d(c, other.coeffs[0]) for c in self.coeffs]
        else:
            if len(self) != len(other):
                raise ValueError("PolySet product needs a singleton or equal lengths")
            prods = [convolve2d(a, b) for a, b in zip(self.coeffs, other.coeffs)]
        return PolySet(np.array(prods))

    def concat(self, other):
        k = max(self.coeffs.shape[1], other.coeffs.shape[1])
        return PolySet(np.concatenate([_pad(self.coeffs, k), _pad(other.coeffs, k)]))

    def _deriv(self, axis):
        d = npoly.polyder(self.coeffs, axis=axis)
        return _pad(d, self.coeffs.shape[1])

    def tabulate(self, points, nderiv=0):
        """Values and derivatives at reference ``points`` (nq, 2).

        Returns ``values`` (nb, nq), plus ``grads`` (nb, nq, 2) when
        ``nderiv >= 1`` and ``hessians`` (nb, nq, 2, 2) when ``nderiv >= 2``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        k = self.coeffs.shape[1]
        X = _monomials(pts, k)
        out = [np.einsum("bac,qac->bq", self.coeffs, X)]
        if nderiv >= 1:
            dx, dy = self._deriv(1), self._deriv(2)
            out.append(np.stack([np.einsum("bac,qac->bq", dx, X),
                                 np.einsum("bac,qac->bq", dy, X)], axis=-1))
        if nderiv >= 2:
            px, py = PolySet(dx), PolySet(dy)
            dxx, dxy, dyy = px._deriv(1), px._deriv(2), py._deriv(2)
            hxx = np.einsum("bac,qac->bq", dxx, X)
            hxy = np.einsum("bac,qac->bq", dxy, X)
            hyy = np.einsum("bac,qac->bq", dyy, X)
            out.append(np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2))
        return out[0] if nderiv == 0 else tuple(out)


def _pad(c, k):
    n, a, b = c.shape
    if a == k and b == k:
        return c
    out = np.zeros((n, max(a, k), max(b, k)))
    out[:, :a, :b] = c
    return out


def _monomials(pts, k):
    px = pts[:, 0][:, None] ** np.arange(k)
    py = pts[:, 1][:, None] ** np.arange(k)
    return px[:, :, None] * py[:, None, :]


def barycentric_polys():
    """The three barycentric coordinates lambda_0, lambda_1, lambda_2 as a PolySet."""
    c = np.zeros((3, 2, 2))
    c[0, 0, 0], c[0, 1, 0], c[0, 0, 1] = 1.0, -1.0, -1.0
    c[1, 1, 0] = 1.0
    c[2, 0, 1] = 1.0
    return PolySet(c)


def monomial_exponents(p):
    return [(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)]


def lagrange_nodes(p):
    """Reference nodes of the degree-``p`` Lagrange element.

    Order: vertices, then ``p - 1`` nodes per local edge (start to end), then
    interior nodes.
    """
    if p < 1:
        raise ValueError("Lagrange degree must be >= 1")
    nodes = [v for v in REF_VERTICES]
    for e in range(3):
        a, b = edge_vertices(e)
        for k in range(1, p):
            t = k / p
            nodes.append((1 - t) * REF_VERTICES[a] + t * REF_VERTICES[b])
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append(np.array([i / p, j / p]))
    return np.array(nodes)


@lru_cache(maxsize=None)
def lagrange_basis(p):
    """Nodal Lagrange basis of degree ``p`` on the reference triangle."""
    nodes = lagrange_nodes(p)
    exps = monomial_exponents(p)
    V = np.array([[x**a * y**c for (a, c) in exps] for x, y in nodes])
    inv = np.linalg.inv(V)
    coeffs = np.zeros((len(exps), p + 1, p + 1))
    for m, (a, c) in enumerate(exps):
        coeffs[:, a, c] = inv[m, :]
    basis = PolySet(coeffs)
    basis.nodes = nodes
    return basis
