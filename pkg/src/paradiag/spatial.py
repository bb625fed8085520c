"""Finite-difference test problems on the unit square.

Unknowns are interior nodes only, ordered lexicographically with x running
fastest, so that ``kron(I, T)`` differentiates in x and ``kron(T, I)`` in y.
Dirichlet data enter through the forcing vector.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, SizeError
from .time_structure import BdfScheme, as_scheme


@dataclass(frozen=True)
class SpatialProblem:
    """Semi-discrete linear problem ``u' = -K u + f(t)``.

    ``source`` maps an absolute time to the forcing vector (boundary
    contributions included).  ``forcing(j, tau)`` evaluates it at ``t0 + j*tau``.
    """

    K: sp.csr_matrix
    n: int
    u0: np.ndarray
    source: Callable[[float], np.ndarray]
    label: str
    nu: Optional[float] = None
    time_invariant_source: bool = field(default=True)

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def n_bar(self) -> int:
        return self.K.shape[0]

    def forcing(self, j: int, tau: float, t0: float = 0.0) -> np.ndarray:
        return self.source(t0 + j * tau)

    def grid(self):
        """Interior node coordinates as flat arrays ``(x, y)``."""
        pts = np.arange(1, self.n + 1) * self.h
        X, Y = np.meshgrid(pts, pts)  # rows index y, columns x -> x fastest
        return X.ravel(), Y.ravel()


def _tridiag(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                    [-1, 0, 1], format="csr") / h**2


def _laplacian(n: int, h: float) -> sp.csr_matrix:
    T = _tridiag(n, h)
    I = sp.identity(n, format="csr")
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def _grid(n: int):
    h = 1.0 / (n + 1)
    pts = np.arange(1, n + 1) * h
    X, Y = np.meshgrid(pts, pts)
    return X.ravel(), Y.ravel(), h


def heat_lambda_min(n: int) -> float:
    """Smallest eigenvalue of the 5-point Laplacian on an n-by-n interior grid."""
    h = 1.0 / (n + 1)
    return 8.0 / h**2 * np.sin(np.pi / (2 * (n + 1))) ** 2


def heat_lambda_max(n: int) -> float:
    h = 1.0 / (n + 1)
    return 8.0 / h**2 * np.cos(np.pi / (2 * (n + 1))) ** 2


def heat2d(n: int) -> SpatialProblem:
    """Heat equation with zero Dirichlet data and u0 = xy(x-1)(1-y)."""
    if n < 2:
        raise SizeError(f"heat2d needs n >= 2, got {n}")
    x, y, h = _grid(n)
    K = _laplacian(n, h)
    u0 = x * y * (x - 1) * (1 - y)
    zero = np.zeros(n * n)
    return SpatialProblem(K, n, u0, lambda t: zero, "heat2d")


def wind(x, y):
    """Recirculating velocity field ``w = (2y(1-x^2), -2x(1-y^2))``."""
    return 2 * y * (1 - x**2), -2 * x * (1 - y**2)


def reversed_wind(x, y):
    """``-w``: the same recirculation turning the other way."""
    wx, wy = wind(x, y)
    return -wx, -wy


def advdiff2d(n: int, nu: float, wind_field=wind) -> SpatialProblem:
    """Advection-diffusion ``u_t - nu*Lap(u) + w.grad(u) = 0`` with centered differences.

    Dirichlet data are 1 on the edge x = 0 and 0 elsewhere; the interior
    initial state is zero.  ``wind_field`` may be replaced (e.g. by a zero
    field) for testing.
    """
    if n < 2:
        raise SizeError(f"advdiff2d needs n >= 2, got {n}")
    if not nu > 0:
        raise ParameterError(f"viscosity must be positive, got {nu}")
    x, y, h = _grid(n)
    wx, wy = wind_field(x, y)
    wx = np.broadcast_to(np.asarray(wx, dtype=float), x.shape)
    wy = np.broadcast_to(np.asarray(wy, dtype=float), x.shape)
    I = sp.identity(n, format="csr")
    D1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * h)
    Dx = sp.kron(I, D1)
    Dy = sp.kron(D1, I)
    K = (nu * _laplacian(n, h) + sp.diags(wx) @ Dx + sp.diags(wy) @ Dy).tocsr()

    # Nodes next to x = 0 see g = 1 through the west neighbour of both stencils.
    west = np.isclose(x, h)
    f = np.zeros(n * n)
    f[west] = nu / h**2 + wx[west] / (2 * h)
    u0 = np.zeros(n * n)
    return SpatialProblem(K, n, u0, lambda t: f, "advdiff2d", nu=nu)


PROBLEMS = {"heat2d": heat2d, "advdiff2d": advdiff2d}


def bdf_rhs(problem: SpatialProblem, scheme, tau: float, ell: int,
            history: Sequence[np.ndarray], t0: float = 0.0) -> np.ndarray:
    """Right-hand side ``G`` of the all-at-once BDF system.

    ``history`` is ``[u_{1-s}, ..., u_0]``; ``u_0`` sits at time ``t0``.
    """
    scheme: BdfScheme = as_scheme(scheme)
    s = scheme.s
    if len(history) != s:
        raise ValueError(f"BDF{s} needs {s} history vectors, got {len(history)}")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    a = scheme.alphas_float
    tb = tau * scheme.beta_float
    G = np.empty((problem.n_bar, ell))
    for j in range(1, ell + 1):
        col = tb * problem.forcing(j, tau, t0)
        for k in range(j, s + 1):
            # u_{j-k} is history[s - 1 + j - k]
            col = col + a[k - 1] * history[s - 1 + j - k]
        G[:, j - 1] = col
    return G
