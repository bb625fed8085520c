# # Higher order BDF schemes
#
# An order-s BDF scheme couples each step to the s previous ones, so the
# time operator is circulant plus a rank-s correction.  The reduced system is
# now s coupled vectors, solved with a block Krylov method.
#
# A manufactured solution u(t) = cos(2 pi t) phi with an exact source makes
# the error purely temporal, so the observed order can be read off.

import numpy as np

from paradiag import SpatialProblem, heat2d, solve_bdf

base = heat2d(12)
x, y = base.grid()
phi = np.sin(np.pi * x) * np.sin(np.pi * y)
Kphi = base.K @ phi


def exact(t):
    return np.cos(2 * np.pi * t) * phi


def source(t):
    return -2 * np.pi * np.sin(2 * np.pi * t) * phi + np.cos(2 * np.pi * t) * Kphi


problem = SpatialProblem(base.K, base.n, exact(0.0), source, "manufactured",
                         time_invariant_source=False)

for s in (1, 2, 3):
    errors = []
    for ell in (16, 32, 64):
        tau = 1 / ell
        history = [exact(-k * tau) for k in range(s - 1, -1, -1)]
        rep = solve_bdf(problem, ell, tau, s=s, eps=1e-12, history=history, t0=0.0)
        errors.append(np.linalg.norm(rep.U[:, -1] - exact(1.0)) / np.linalg.norm(phi))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    print("BDF%d  errors " % s + "  ".join("%.2e" % e for e in errors)
          + "  observed order " + "  ".join("%.2f" % r for r in rates))
