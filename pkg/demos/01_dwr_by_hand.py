# coding: utf-8

# # Goal-oriented error estimation, one step at a time
#
# We solve -Δu = f on the unit square with u = 0 on the boundary and ask for
# the mean value M(u) = ∫ u dx. For f = 2(x(1-x) + y(1-y)) the solution is
# u = x(1-x)y(1-y), so M(u) = 1/36 and we can compare every estimate with the
# true error.

# In[1]:

import numpy as np

from goalfem import (DirichletBC, FEFunction, FunctionSpace, SpatialCoordinate, TestFunction,
                     derivative, dx, extrapolate, grad, indicators, inner, interpolate, localize,
                     assemble, mark_dorfler, residual_form, solve_dual, solve_newton, unit_square)


# Build a mesh, a P1 space and the variational problem F(u; v) = 0.

# In[2]:

mesh = unit_square(8)
V = FunctionSpace(mesh, 1)
u, v = FEFunction(V), TestFunction(V)
x = SpatialCoordinate()
f = 2 * (x[0] * (1 - x[0]) + x[1] * (1 - x[1]))
F = inner(grad(u), grad(v)) * dx - f * v * dx
M = u * dx
bcs = [DirichletBC(V, 0.0, m) for m in (1, 2, 3, 4)]
solve_newton(F, u, bcs)
print("M(u_h) =", assemble(M), " true error =", 1 / 36 - assemble(M))


# The dual problem is assembled from the adjoint of the linearized form and
# the derivative of the goal. Its solution z_h tells how much each part of
# the residual matters for the goal.

# In[3]:

z, _, _ = solve_dual(F, u, M, bcs)
print("dual solution range:", z.vector.min(), z.vector.max())


# The residual r(v) = -F(u_h; v) vanishes on V_h, so z_h itself carries no
# information. Lifting z_h to P2 by patchwise least squares gives a usable
# approximation of the true dual solution.

# In[4]:

r = residual_form(F, u)
Ez = extrapolate(z)
Ez.vector[Ez.space.boundary_dofs()] = 0.0
eta_h = abs(assemble(r, test_space=Ez.space) @ Ez.vector)
print("eta_h =", eta_h, " efficiency =", eta_h / abs(1 / 36 - assemble(M)))


# To localize, the residual is rewritten as cell residuals R_T and facet
# residuals R_dT. For Poisson with P1, R_T is the P1 projection of f (exactly
# f when f is linear) and R_dT is -∂_n u_h, so the two columns below agree up
# to the data approximation.

# In[5]:

rep = localize(r)
c = 5
centroid = mesh.vertices[mesh.cells[c]].mean(axis=0)
print("R_T at centroid:", rep.cell_value(c, centroid),
      " f at centroid:", 2 * (centroid[0] * (1 - centroid[0]) + centroid[1] * (1 - centroid[1])))


# Weighting R_T and R_dT by Ez - π Ez gives one indicator per cell. Dörfler
# marking then picks the smallest set of cells holding half the total.

# In[6]:

ind = indicators(rep, Ez, interpolate(Ez, V))
marked = mark_dorfler(ind.eta, 0.5)
print("sum of indicators:", ind.total, " marked", len(marked), "of", mesh.num_cells, "cells")
print("largest indicators:", np.sort(ind.eta)[-5:])
