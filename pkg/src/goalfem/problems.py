"""Built-in test problems with known goal values."""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import roots_legendre

from .driver import ProblemSpec
from .forms import Expression, SpatialCoordinate, TestFunction, ds, dx, grad, inner
from .mesh import lshape, unit_square
from .space import FEFunction


@dataclass
class DemoProblem:
    """A named problem: initial mesh, problem definition, reference goal."""

    name: str
    mesh: Callable
    problem: ProblemSpec
    reference: float
    provenance: str


# -- smooth Poisson ----------------------------------------------------------------

def _smooth_forms(V):
    u = FEFunction(V, name="u")
    v = TestFunction(V)
    x = SpatialCoordinate()
    f = 2 * (x[0] * (1 - x[0]) + x[1] * (1 - x[1]))
    F = inner(grad(u), grad(v)) * dx - f * v * dx
    return F, u, u * dx


def poisson_smooth():
    """-lap u = f on the unit square, u = x(1-x)y(1-y), goal int u dx = 1/36."""
    spec = ProblemSpec(_smooth_forms, {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}, exact_goal=1 / 36,
                       exact_solution=lambda p: p[..., 0] * (1 - p[..., 0]) * p[..., 1] * (1 - p[..., 1]),
                       name="poisson-smooth")
    return DemoProblem("poisson-smooth", lambda: unit_square(4), spec, 1 / 36,
                       "exact integral of the manufactured solution")


# -- L-shape corner singularity ------------------------------------------------------------

def _polar(p):
    p = np.asarray(p, dtype=float)
    r = np.hypot(p[..., 0], p[..., 1])
    theta = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2 * np.pi)
    return r, theta


def lshape_exact(p):
    """``r**(2/3) * sin(2 theta / 3)`` with theta in [0, 2 pi)."""
    r, theta = _polar(p)
    return r ** (2 / 3) * np.sin(2 * theta / 3)


def lshape_exact_dx(p):
    r, theta = _polar(p)
    with np.errstate(divide="ignore"):
        return (2 / 3) * r ** (-1 / 3) * np.sin(-theta / 3)


def lshape_reference_goal(n=64):
    """Integral of the exact solution over the side x = -1 (Gauss-Legendre, ``n`` points)."""
    t, w = roots_legendre(n)
    pts = np.column_stack([-np.ones(n), t])
    return float(w @ lshape_exact(pts))


def _lshape_forms(V):
    u = FEFunction(V, name="u")
    v = TestFunction(V)
    # outward normal on x = -1 is (-1, 0)
    g = Expression(lambda p: -lshape_exact_dx(p), degree=4)
    F = inner(grad(u), grad(v)) * dx - g * v * ds(1)
    return F, u, u * ds(1)


def poisson_lshape():
    """Laplace on the L-shape with the corner singularity as exact solution;
    goal is the integral of u over the side x = -1."""
    ref = lshape_reference_goal()
    spec = ProblemSpec(_lshape_forms, {2: lshape_exact}, exact_goal=ref, exact_solution=lshape_exact,
                       name="poisson-lshape")
    return DemoProblem("poisson-lshape", lambda: lshape(2), spec, ref,
                       "64-point Gauss-Legendre quadrature of the exact solution")


# -- nonlinear Poisson -------------------------------------------------------------------------

def _nonlinear_forms(V):
    u = FEFunction(V, name="u")
    v = TestFunction(V)
    f = 1.0
    F = inner((1 + u**2) * grad(u), grad(v)) * dx - f * v * dx
    return F, u, u * dx


def nonlinear_exact(x):
    """Solution of ``u + u**3 / 3 = x - x**2 / 2`` (the problem is one-dimensional)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        rhs = xi - xi**2 / 2
        out[i] = brentq(lambda s: s + s**3 / 3 - rhs, -1.0, 1.0, xtol=1e-15, rtol=1e-15)
    return out


def nonlinear_reference_goal(n=64):
    t, w = roots_legendre(n)
    return float(0.5 * w @ nonlinear_exact(0.5 * (t + 1)))


def nonlinear_poisson():
    """-div((1 + u^2) grad u) = 1 on the unit square, u = 0 on x = 0, goal int u dx."""
    ref = nonlinear_reference_goal()
    spec = ProblemSpec(_nonlinear_forms, {1: 0.0}, exact_goal=ref,
                       exact_solution=lambda p: nonlinear_exact(np.asarray(p)[..., 0]),
                       name="nonlinear-poisson")
    return DemoProblem("nonlinear-poisson", lambda: unit_square(4), spec, ref,
                       "one-dimensional reduction solved pointwise and integrated by Gauss-Legendre")


DEMOS = {
    "poisson-smooth": poisson_smooth,
    "poisson-lshape": poisson_lshape,
    "nonlinear-poisson": nonlinear_poisson,
}


def get_demo(name):
    try:
        return DEMOS[name]()
    except KeyError:
        raise ValueError(f"unknown demo {name!r}; choose from {sorted(DEMOS)}") from None
