# coding: utf-8

# # A nonlinear problem
#
# -div((1 + u²) ∇u) = 1 on the unit square, u = 0 on the side x = 0 and
# natural conditions elsewhere. Nothing in the adaptive loop changes: Newton
# replaces the linear solve and the dual problem uses the derivative of F at
# u_h.

# In[1]:

from goalfem import (DirichletBC, FEFunction, FunctionSpace, TestFunction, adapt, dx, grad, inner,
                     solve_newton, unit_square)
from goalfem.problems import get_demo


# A single Newton solve shows the quadratic convergence.

# In[2]:

V = FunctionSpace(unit_square(8), 1)
u, v = FEFunction(V), TestFunction(V)
F = inner((1 + u**2) * grad(u), grad(v)) * dx - 1.0 * v * dx
res = solve_newton(F, u, [DirichletBC(V, 0.0, 1)])
for k, r in enumerate(res.residuals):
    print(f"  step {k}: |F| = {r:.3e}")


# The adaptive loop warm-starts Newton from the previous mesh, so after the
# first mesh only a couple of steps are needed.

# In[3]:

demo = get_demo("nonlinear-poisson")
u, report = adapt(demo.problem, demo.mesh(), tol=1e-3)
for it in report.iterations:
    print(f"{it['dofs']:5d} dofs  goal {it['goal']:.8f}  eta_h {it['eta_h']:.2e}  "
          f"error {it['exact_error']:.2e}  newton {it['newton_iterations']}")
