# # Backward Euler for the heat equation, all time steps at once
#
# We solve u' = Laplace(u) on the unit square for 32 time steps as one
# linear system, split it into a circulant part (diagonalized by an FFT in
# time) plus a rank-one correction, and compare with plain time stepping.

import numpy as np

from paradiag import heat2d, sequential_oracle, solve_be
from paradiag.analysis import jl_extremes
from paradiag.spatial import heat_lambda_max, heat_lambda_min
from paradiag.time_structure import spectrum

n, ell = 64, 32
problem = heat2d(n)
print("unknowns per step:", problem.n_bar)

# One solve.  The correction needs a small Krylov solve; for the heat
# equation one iteration already reaches 1e-8.

report = solve_be(problem, ell)
print("inner iterations:", report.inner_iterations)
print("parallel-in-time loops:", report.pint_loops)
print("all-at-once residual: %.2e" % report.rel_residual)

# Why one iteration is enough: the reduced operator is a tiny perturbation
# of the identity.  Its extreme eigenvalues follow from those of K.

lo, hi = jl_extremes(spectrum(1, ell), 1 / ell, heat_lambda_min(n), heat_lambda_max(n))
print("reduced operator spectrum in [%.12f, %.12f]" % (lo, hi))

# Same answer as stepping through time one step after another.

reference = sequential_oracle(problem, 1, 1 / ell, ell, [problem.u0])
err = np.linalg.norm(report.U - reference) / np.linalg.norm(reference)
print("difference to sequential stepping: %.2e" % err)
