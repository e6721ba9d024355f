"""Goal-oriented adaptive finite element methods on triangle meshes.

A small form language describes weak forms; the library assembles them with
continuous Lagrange elements, derives linearized adjoint problems
automatically, and drives dual-weighted-residual mesh adaptation.
"""
from .assemble import (LinearSystem, NewtonError, NewtonResult, SolverError, assemble,
                       assemble_functional, integrate_local, solve_linear, solve_newton)
from .driver import AdaptiveReport, ProblemSpec, adapt, solve_dual, uniform_baseline
from .dwr import (Indicators, LocalProblemError, ResidualRep, bubble, cone, estimate,
                  extrapolate, indicators, localize, mark_dorfler)
from .forms import (CellwiseConstant, Constant, Expression, FacetNormal, Form, FormError,
                    SpatialCoordinate, TestFunction, TrialFunction, action, adjoint, derivative,
                    div, ds, dx, grad, inner, replace, residual_form)
from .mesh import (Mesh, MeshError, check_conformity, lshape, mark_and_refine, read_msh2,
                   rectangle, refine_uniform, unit_square, write_msh2, write_svg)
from .space import (DirichletBC, FEFunction, FunctionSpace, apply_dirichlet, interpolate,
                    transfer)

__version__ = "0.1.0"
