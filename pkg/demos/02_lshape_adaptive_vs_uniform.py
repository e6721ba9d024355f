# coding: utf-8

# # Adaptive against uniform refinement on the L-shaped domain
#
# The solution on the L-shape has a singular gradient at the re-entrant
# corner. The goal is the integral of u over the left side x = -1. Uniform
# refinement spends most of its dofs far from the corner; the goal-oriented
# loop does not.

# In[1]:

import numpy as np

from goalfem import adapt, uniform_baseline, write_svg
from goalfem.problems import get_demo

demo = get_demo("poisson-lshape")
print("reference goal:", demo.reference)


# In[2]:

u, adaptive = adapt(demo.problem, demo.mesh(), tol=1e-4)
uniform = uniform_baseline(demo.problem, demo.mesh(), levels=8)


# Error against number of dofs for both sequences.

# In[3]:

for label, rep in (("adaptive", adaptive), ("uniform", uniform)):
    print(label)
    for it in rep.iterations:
        print(f"  {it['dofs']:6d} dofs  error {it['exact_error']:.3e}  eta_h {it['eta_h']:.3e}")


# The final adaptive mesh shows the refinement concentrating at the corner
# and along the left side where the goal lives.

# In[4]:

write_svg(u.space.mesh, "lshape_adaptive.svg")
dofs = np.array(adaptive.column("dofs"))
err = np.array(adaptive.column("exact_error"))
print("observed rate:", np.polyfit(np.log(dofs[-4:]), np.log(err[-4:]), 1)[0])
