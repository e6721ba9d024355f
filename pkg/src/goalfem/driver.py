"""Goal-oriented adaptive loop.

Each iteration solves the primal problem, derives and solves the linearized
adjoint problem, extrapolates the dual solution, evaluates the error
estimate, and either stops or marks and refines.
"""
import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assemble import LinearSystem, NewtonError, SolverError, assemble, solve_linear, solve_newton
from .dwr import estimate, extrapolate, indicators, localize, mark_dorfler
from .forms import adjoint, derivative, is_linear_in, replace, residual_form
from .mesh import mark_and_refine
from .space import DirichletBC, FEFunction, FunctionSpace, constraints, interpolate, transfer

log = logging.getLogger(__name__)

CSV_FIELDS = ["iter", "cells", "dofs", "goal", "eta_h", "sum_eta_T", "exact_error",
              "eff_h", "eff_sum", "marked"]


@dataclass
class ProblemSpec:
    """A stationary problem ``F(u; v) = 0`` with goal functional ``M``.

    Parameters
    ----------
    forms : callable
        ``forms(V) -> (F, u, M)`` where ``u`` is an :class:`FEFunction` on
        ``V`` (the unknown), ``F`` is linear in its test function and ``M``
        is a functional of ``u``.
    dirichlet : dict
        ``{marker: g}`` with ``g`` a number or a callable of points (n, 2).
    exact_goal : float, optional
        ``M(u)`` for the exact solution, used to report the true error.
    exact_solution : callable, optional
    name : str
    """

    forms: Callable
    dirichlet: dict = field(default_factory=dict)
    exact_goal: Optional[float] = None
    exact_solution: Optional[Callable] = None
    name: str = "problem"


@dataclass
class AdaptiveReport:
    """Per-iteration records of an adaptive run."""

    iterations: list = field(default_factory=list)
    converged: bool = False
    metadata: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    def __len__(self):
        return len(self.iterations)

    def column(self, key):
        return [it[key] for it in self.iterations]

    def to_dict(self):
        return {"metadata": dict(self.metadata, converged=self.converged),
                "iterations": self.iterations}

    def to_json(self, path=None):
        """JSON text (sorted keys, no timings). Written to ``path`` if given."""
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for it in self.iterations:
            w.writerow(["" if it[k] is None else _fmt(it[k]) for k in
                        ["iteration"] + CSV_FIELDS[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


@dataclass
class IterationState:
    """Everything computed in one adaptive iteration (passed to callbacks)."""

    iteration: int
    mesh: object
    u: FEFunction
    z: FEFunction
    Ez: FEFunction
    eta_h: float
    indicators: object
    marked: list
    record: dict


def _bcs(space, dirichlet):
    return [DirichletBC(space, g, marker) for marker, g in sorted(dirichlet.items())]


def _solve_primal(F, u, bcs, load_norm):
    """Newton for nonlinear problems; one Newton step is the linear solve."""
    return solve_newton(F, u, bcs, tol_rel=1e-12, atol=1e-13 * load_norm,
                        max_iter=25, step_tol=1e-14)


def _load_norms(F, u, bcs, free):
    """Norms of ``F(g_h; .)`` on free dofs, where ``g_h`` carries only the boundary data."""
    g = FEFunction(u.space)
    for bc in bcs:
        bc.apply(g)
    b = assemble(replace(F, {u: g}))[free]
    if not b.size:
        return 1.0, 1.0
    n2, ninf = float(np.linalg.norm(b)), float(np.abs(b).max())
    return (n2 or 1.0), (ninf or 1.0)


def solve_dual(F, u, M, bcs):
    """Solve ``adjoint(F'(u_h)) z = M'(u_h)`` with homogeneous boundary values.

    Returns ``(z, dual_matrix, jacobian_form)``.
    """
    J = derivative(F, u)
    Astar = assemble(adjoint(J))
    rhs = assemble(derivative(M, u), test_space=u.space)
    system = LinearSystem.from_bcs(Astar, rhs, bcs, name="dual", homogeneous=True)
    z = FEFunction(u.space, solve_linear(system), name="z_h")
    return z, Astar, J


def adapt(problem, mesh0, degree=1, tol=1e-3, alpha=0.5, max_iter=20, marking="dorfler",
          check_adjoint=True, callback=None, stop=True):
    """Run the goal-oriented adaptive loop.

    Parameters
    ----------
    problem : ProblemSpec
    mesh0 : Mesh
    degree : int
        Polynomial degree of the primal space.
    tol : float
        Stop as soon as ``eta_h <= tol``.
    alpha : float
        Doerfler fraction.
    max_iter : int
        Maximum number of solves.
    marking : {'dorfler', 'all'}
    check_adjoint : bool
        For problems linear in ``u``, assert that the dual matrix is the
        transpose of the primal one (to 1e-13 relative).
    callback : callable, optional
        Called with an :class:`IterationState` after every iteration.
    stop : bool
        When False the tolerance is ignored and exactly ``max_iter``
        iterations run.

    Returns
    -------
    u_h : FEFunction
    report : AdaptiveReport
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if int(max_iter) < 1:
        raise ValueError("max_iter must be at least 1")
    if marking not in ("dorfler", "all"):
        raise ValueError(f"unknown marking strategy {marking!r}")

    report = AdaptiveReport(metadata=dict(problem=problem.name, degree=int(degree), tol=float(tol),
                                          alpha=float(alpha), max_iter=int(max_iter), marking=marking))
    mesh = mesh0
    u_prev = None
    u = None
    for k in range(int(max_iter)):
        t0 = time.perf_counter()
        V = FunctionSpace(mesh, degree)
        F, u, M = problem.forms(V)
        if u_prev is not None:
            u.vector[:] = transfer(u_prev, V).vector
        bcs = _bcs(V, problem.dirichlet)
        cdofs, _ = constraints(bcs)
        free = np.setdiff1d(np.arange(V.dim), cdofs)
        load2, loadinf = _load_norms(F, u, bcs, free)
        linear = is_linear_in(F, u)
        try:
            newton = _solve_primal(F, u, bcs, load2)
            t1 = time.perf_counter()
            z, Astar, J = solve_dual(F, u, M, bcs)
        except NewtonError as exc:
            raise NewtonError(f"adaptive iteration {k}: {exc}", exc.residuals) from exc
        except SolverError as exc:
            raise SolverError(f"adaptive iteration {k}: {exc}") from exc
        t2 = time.perf_counter()
        adjoint_defect = None
        if check_adjoint and linear:
            A = assemble(J)
            scale = max(abs(A).max(), 1.0)
            adjoint_defect = float(abs(Astar - A.T).max()) / scale
            if adjoint_defect > 1e-13:
                raise SolverError(f"adaptive iteration {k}: dual matrix differs from the primal transpose "
                                  f"by {adjoint_defect:.3e}")

        r = residual_form(F, u)
        rvec = assemble(r)
        orthogonality = float(np.abs(rvec[free]).max()) / loadinf if free.size else 0.0

        W = FunctionSpace(mesh, degree + 1)
        Ez = extrapolate(z, W)
        if problem.dirichlet:
            # the dual solution vanishes on the Dirichlet boundary
            Ez.vector[W.boundary_dofs(sorted(problem.dirichlet))] = 0.0
        eta_h = estimate(r, Ez)
        piEz = interpolate(Ez, V)
        ind = indicators(localize(r, V), Ez, piEz)
        t3 = time.perf_counter()

        goal = float(assemble(M))
        exact_error = None if problem.exact_goal is None else abs(problem.exact_goal - goal)
        good = exact_error is not None and exact_error > 0
        converged = stop and eta_h <= tol
        last = k == int(max_iter) - 1
        marked = []
        if not converged and not last:
            marked = (sorted(mark_dorfler(ind.eta, alpha)) if marking == "dorfler"
                      else list(range(mesh.num_cells)))
        record = dict(
            iteration=k, cells=int(mesh.num_cells), dofs=int(V.dim), goal=goal, eta_h=eta_h,
            sum_eta_T=ind.total, signed_sum=ind.signed_sum, exact_error=exact_error,
            eff_h=eta_h / exact_error if good else None,
            eff_sum=ind.total / exact_error if good else None,
            marked=len(marked), newton_iterations=int(newton.iterations),
            newton_residuals=[float(x) for x in newton.residuals],
            orthogonality=orthogonality, adjoint_defect=adjoint_defect,
        )
        report.iterations.append(record)
        report.timings.append(dict(primal=t1 - t0, dual=t2 - t1, estimate=t3 - t2))
        log.info("iter %d: cells=%d dofs=%d goal=%.12g eta_h=%.3e", k, mesh.num_cells, V.dim, goal, eta_h)
        if callback is not None:
            callback(IterationState(k, mesh, u, z, Ez, eta_h, ind, marked, record))
        if converged:
            report.converged = True
            break
        if last or not marked:
            break
        mesh = mark_and_refine(mesh, marked)
        u_prev = u
    return u, report


def uniform_baseline(problem, mesh0, degree=1, levels=4, callback=None):
    """Same pipeline with every cell marked at every level; ``levels`` solves."""
    if int(levels) < 1:
        raise ValueError("levels must be at least 1")
    _, report = adapt(problem, mesh0, degree=degree, tol=1.0, max_iter=levels,
                      marking="all", callback=callback, stop=False)
    return report
