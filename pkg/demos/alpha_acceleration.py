# # The alpha-circulant splitting on a convection problem
#
# For advection-diffusion the plain circulant splitting needs many inner
# iterations.  Scaling the wrap-around entry by alpha shrinks the correction
# term, so U_1 (one loop) is already close and three loops give a full
# solution.  Too small an alpha makes the scaled DFT ill-conditioned.

import numpy as np

from paradiag import advdiff2d, gmres_allatonce, solve_be, solve_be_alpha
from paradiag.analysis import dft_scaling_condition

n, ell, nu = 48, 32, 0.01
problem = advdiff2d(n, nu)

plain = solve_be(problem, ell, maxit=150, strict=False)
print("alpha = 1:    %3d inner iterations, %3d loops, residual %.1e (%s)"
      % (plain.inner_iterations, plain.pint_loops, plain.rel_residual, plain.inner.status))

fast = solve_be_alpha(problem, ell, alpha=1e-4)
print("alpha = 1e-4: %3d inner iterations, %3d loops, residual %.1e"
      % (fast.inner_iterations, fast.pint_loops, fast.rel_residual))

# The circulant-preconditioned GMRES reference uses one loop per iteration
# plus one to form the solution.

ref = gmres_allatonce(problem, 1 / ell, ell, eps=1e-12)
print("GMRES:        %3d iterations,       %3d loops" % (ref.iterations, ref.pint_loops))

# Sweep alpha: the U_1 residual falls like alpha, the full residual like
# alpha squared, until rounding in the scaled transform takes over.

print("\n   alpha   res(U1)    res(U)     error     cond(F D)")
for alpha in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8]:
    rep = solve_be_alpha(problem, ell, alpha=alpha, maxit=1, early_exit=False, strict=False)
    err = np.linalg.norm(rep.U - ref.U) / np.linalg.norm(ref.U)
    print("%8.0e  %.2e  %.2e  %.2e  %.1e"
          % (alpha, rep.res_u1, rep.rel_residual, err, dft_scaling_condition(alpha, ell)))
