import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from goalfem import (DirichletBC, FEFunction, FunctionSpace, Mesh, SpatialCoordinate,
                     TestFunction, assemble, bubble, cone, dx, estimate, extrapolate, grad, indicators, inner, interpolate,
                     localize, lshape, mark_and_refine, mark_dorfler, rectangle, refine_uniform,
                     residual_form, solve_newton, unit_square)
from goalfem.dwr import _local_operators, bubble_polys, cone_polys
from goalfem.forms import Expression
from goalfem.reference import edge_vertices, triangle_rule
from goalfem.space import evaluate_gradient

REF = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def _random_refined(seed, times=3):
    rng = np.random.default_rng(seed)
    mesh = unit_square(3)
    for _ in range(times):
        k = max(1, mesh.num_cells // 3)
        mesh = mark_and_refine(mesh, set(rng.choice(mesh.num_cells, k, replace=False).tolist()))
    return mesh


def _poisson_residual(V, f, seed=0):
    rng = np.random.default_rng(seed)
    u = FEFunction(V, rng.standard_normal(V.dim))
    v = TestFunction(V)
    return residual_form(inner(grad(u), grad(v)) * dx - f * v * dx, u), u


# -- bubble and cone ----------------------------------------------------------------------

def test_bubble_values():
    b = bubble(REF, 0)
    assert abs(b((1 / 3, 1 / 3)) - 1 / 27) < 1e-16
    for pt in [(0, 0), (1, 0), (0, 1), (0.5, 0), (0.5, 0.5), (0, 0.3)]:
        assert b(pt) == 0
    rule = triangle_rule(3)
    ref_integral = rule.weights @ bubble_polys().tabulate(rule.points)[0]
    assert abs(ref_integral - 1 / 120) < 1e-16
    big = Mesh([[0, 0], [2, 0], [0, 2]], [[0, 1, 2]])
    assert abs(big.detj[0] * ref_integral - big.areas[0] / 60) < 1e-15
    assert abs(bubble(big, 0)((2 / 3, 2 / 3)) - 1 / 27) < 1e-15


@pytest.mark.parametrize("e", [0, 1, 2])
def test_cone_values(e):
    a, b = edge_vertices(e)
    V = REF.vertices
    beta = cone(REF, 0, e)
    assert abs(beta(0.5 * (V[a] + V[b])) - 0.25) < 1e-16
    # vanishes on the other two edges
    for other in {0, 1, 2} - {e}:
        oa, ob = edge_vertices(other)
        for t in (0.2, 0.7):
            assert abs(beta((1 - t) * V[oa] + t * V[ob])) < 1e-16
    # restricted to its edge it is the 1D bubble t(1 - t)
    t = 0.3
    assert abs(beta((1 - t) * V[a] + t * V[b]) - t * (1 - t)) < 1e-16
    assert cone_polys(e).degree == 2


@pytest.mark.parametrize("p", [1, 2, 3])
def test_local_matrices_positive_definite(p):
    ops = _local_operators(p, p)
    for M in (ops["Mb"], ops["H"]):
        assert np.allclose(M, M.T, atol=1e-16)
        ev = np.linalg.eigvalsh(M)
        assert ev.min() > 0 and np.isfinite(ev.max() / ev.min())


# -- localization ----------------------------------------------------------------------------

def test_poisson_oracle_p1():
    mesh = refine_uniform(unit_square(2), 2)
    V = FunctionSpace(mesh, 1)
    x = SpatialCoordinate()
    f = 1 + 2 * x[0] - x[1]  # degree 1 = p
    r, u = _poisson_residual(V, f, seed=4)
    rep = localize(r)
    for c in range(0, mesh.num_cells, 3):
        verts = mesh.vertices[mesh.cells[c]]
        for lam in ([0.2, 0.3, 0.5], [0.6, 0.2, 0.2]):
            pt = np.array(lam) @ verts
            assert abs(rep.cell_value(c, pt) - (1 + 2 * pt[0] - pt[1])) < 1e-10
        for e in range(3):
            a, b = edge_vertices(e)
            pt = 0.5 * (verts[a] + verts[b])
            dn = evaluate_gradient(u, c, 0.99 * pt + 0.01 * verts.mean(axis=0)) @ mesh.normals[c, e]
            for t in (0.0, 0.5, 1.0):
                assert abs(rep.facet_value(c, e, t) + dn) < 1e-10


@pytest.mark.parametrize("p", [1, 2])
@pytest.mark.parametrize("seed", [0, 1])
def test_reconstruction_identity(p, seed):
    mesh = _random_refined(seed)
    V = FunctionSpace(mesh, p)
    x = SpatialCoordinate()
    f = 1 + x[0] ** p - 3 * x[0] * x[1] ** (p - 1)
    r, _ = _poisson_residual(V, f, seed)
    rep = localize(r)
    W = FunctionSpace(mesh, p + 1)
    exact = assemble(r, test_space=W)
    assert np.abs(rep.residual_vector(W) - exact).max() <= 1e-9 * np.abs(exact).max()


def test_averaged_facet_sums_agree():
    mesh = _random_refined(3, times=2)
    V = FunctionSpace(mesh, 1)
    r, _ = _poisson_residual(V, 1.0, 7)
    rep = localize(r)
    W = FunctionSpace(mesh, 2)
    w = FEFunction(W, np.random.default_rng(1).standard_normal(W.dim))
    cell_terms, facet_terms = rep.local_terms(w)
    zero = FEFunction(V)
    ind = indicators(rep, w, zero)
    assert abs(ind.signed_sum - (cell_terms.sum() + facet_terms.sum())) < 1e-12 * np.abs(facet_terms).sum()


def test_non_polynomial_data_discrepancy_decreases():
    mesh = refine_uniform(unit_square(3), 2)
    V = FunctionSpace(mesh, 1)
    f = Expression(lambda p: np.exp(p[..., 0] + p[..., 1]), degree=4)
    r, _ = _poisson_residual(V, f, 2)
    W = FunctionSpace(mesh, 2)
    ref = assemble(r, test_space=W)
    d = [np.abs(localize(r, FunctionSpace(mesh, q)).residual_vector(W) - ref).max() for q in (1, 2, 3)]
    assert d[0] > d[1] > d[2]


def test_localize_needs_linear_form():
    V = FunctionSpace(unit_square(2), 1)
    with pytest.raises(ValueError):
        localize(FEFunction(V) * dx)


# -- extrapolation ------------------------------------------------------------------------------

def _perturbed(n, seed):
    base = unit_square(n)
    v = base.vertices.copy()
    inside = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[inside] += np.random.default_rng(seed).uniform(-0.08 / n * 4, 0.08 / n * 4, (inside.sum(), 2))
    return Mesh(v, base.cells, base.markers)


def test_extrapolate_quadratic_and_affine():
    mesh = _perturbed(4, 0)
    V, W = FunctionSpace(mesh, 1), FunctionSpace(mesh, 2)
    sq = extrapolate(interpolate(lambda p: p[:, 0] ** 2, V))
    assert sq.space.degree == 2
    assert np.abs(sq.vector - W.dof_coordinates[:, 0] ** 2).max() < 1e-8
    aff = extrapolate(interpolate(lambda p: 1 - 2 * p[:, 0] + 0.5 * p[:, 1], V))
    X = W.dof_coordinates
    assert np.abs(aff.vector - (1 - 2 * X[:, 0] + 0.5 * X[:, 1])).max() < 1e-12


def test_extrapolate_strip_parabola():
    # three intervals along x, the quadratic is recovered from its vertex samples;
    # a second row of cells is needed so that the patches determine all quadratics
    mesh = rectangle(0, 0, 3, 1, 3, 2)
    V = FunctionSpace(mesh, 1)
    Ev = extrapolate(interpolate(lambda p: p[:, 0] ** 2 - p[:, 0], V))
    X = Ev.space.dof_coordinates
    assert np.abs(Ev.vector - (X[:, 0] ** 2 - X[:, 0])).max() < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 2), st.integers(0, 10**6), st.integers(0, 2))
def test_extrapolation_reproduces_degree_p_plus_one(p, seed, which):
    mesh = [_perturbed(3, seed), _random_refined(seed % 7, times=2), lshape(2)][which]
    V = FunctionSpace(mesh, p)
    rng = np.random.default_rng(seed)
    a = rng.integers(0, p + 2)
    b = rng.integers(0, p + 2 - a)
    c = rng.standard_normal(2)

    def q(x):
        return c[0] * x[:, 0] ** a * x[:, 1] ** b + c[1]
    Ev = extrapolate(interpolate(q, V))
    assert np.abs(Ev.vector - q(Ev.space.dof_coordinates)).max() < 1e-8


def test_extrapolate_rank_deficient_patch_raises():
    with pytest.raises(ValueError):
        extrapolate(FEFunction(FunctionSpace(REF, 1)))


def test_extrapolate_target_checks():
    mesh = unit_square(2)
    with pytest.raises(ValueError):
        extrapolate(FEFunction(FunctionSpace(mesh, 1)), FunctionSpace(mesh, 3))


# -- estimate and indicators ---------------------------------------------------------------------

def _solved_poisson(mesh, p=1):
    V = FunctionSpace(mesh, p)
    u, v = FEFunction(V), TestFunction(V)
    x = SpatialCoordinate()
    F = inner(grad(u), grad(v)) * dx - (1 + x[0]) * v * dx
    solve_newton(F, u, [DirichletBC(V, 0.0, m) for m in (1, 2, 3, 4)])
    return V, u, residual_form(F, u)


def test_estimate_orthogonality_identities():
    mesh = _random_refined(5, times=2)
    V, u, r = _solved_poisson(mesh)
    W = FunctionSpace(mesh, 2)
    rng = np.random.default_rng(0)
    Ez = FEFunction(W, rng.standard_normal(W.dim))
    Ez.vector[W.boundary_dofs()] = 0
    piEz = interpolate(Ez, V)
    scale = np.abs(assemble(r, test_space=W)).max()
    assert estimate(r, interpolate(piEz, W)) <= 1e-10 * scale
    diff = FEFunction(W, Ez.vector - interpolate(piEz, W).vector)
    assert abs(estimate(r, Ez) - estimate(r, diff)) <= 1e-10 * estimate(r, Ez)


def test_indicator_totals():
    mesh = _random_refined(6, times=2)
    V, u, r = _solved_poisson(mesh)
    W = FunctionSpace(mesh, 2)
    Ez = FEFunction(W, np.random.default_rng(2).standard_normal(W.dim))
    Ez.vector[W.boundary_dofs()] = 0
    piEz = interpolate(Ez, V)
    ind = indicators(localize(r), Ez, piEz)
    diff = FEFunction(W, Ez.vector - interpolate(piEz, W).vector)
    target = assemble(r, test_space=W) @ diff.vector
    assert abs(ind.signed_sum - target) <= 1e-10 * abs(target)
    assert ind.total >= ind.eta_h
    assert np.all(ind.eta >= 0)
    assert abs(ind.eta_h - abs(ind.signed_sum)) <= 1e-12 * ind.eta_h


# -- marking ----------------------------------------------------------------------------------

def test_dorfler_examples():
    assert mark_dorfler([4, 3, 2, 1], 0.5) == {0, 1}
    assert mark_dorfler([0, 2, 0, 1], 1.0) == {1, 3}
    for n in (1, 6, 7):
        assert len(mark_dorfler(np.ones(n), 0.5)) == -(-n // 2)
    assert mark_dorfler(np.zeros(5), 0.5) == set()
    # ties go to the lower cell id
    assert mark_dorfler([1, 2, 2, 1], 0.25) == {1}
    with pytest.raises(ValueError):
        mark_dorfler([1, -1], 0.5)
    with pytest.raises(ValueError):
        mark_dorfler([1, 1], 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False, allow_subnormal=False), min_size=1, max_size=40),
       st.floats(0.01, 1.0))
def test_dorfler_properties(eta, alpha):
    eta = np.array(eta)
    marked = mark_dorfler(eta, alpha)
    total = eta.sum()
    if total == 0:
        assert marked == set()
        return
    s = eta[sorted(marked)].sum()
    assert s >= alpha * total * (1 - 1e-12)
    # every unmarked cell is no larger than every marked cell
    un = np.setdiff1d(np.arange(len(eta)), sorted(marked))
    if un.size:
        assert eta[un].max() <= eta[sorted(marked)].min()
    if alpha < 1:
        smallest = min(marked, key=lambda i: (eta[i], -i))
        assert s - eta[smallest] < alpha * total * (1 + 1e-12)
