"""Spectral facts about the reduced system and dense reference solvers.

The dense routines are oracles for tests and small experiments; each one
refuses sizes where an accidental call would take minutes.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EstimationError, OracleSizeError, ParameterError
from .spatial import SpatialProblem, bdf_rhs
from .time_structure import SchemeLike, TimeSpectrum, as_scheme, build_sigma

DENSE_JL_MAX = 256
DENSE_ALLATONCE_MAX = 4096


@dataclass(frozen=True)
class SpectralSummary:
    lambda_min_K: float
    lambda_max_K: float
    bound: float
    jl_min: float
    jl_max: float
    kappa_FD: float

    @classmethod
    def build(cls, spec: TimeSpectrum, tau: float, lambda_min: float,
              lambda_max: float) -> "SpectralSummary":
        lo, hi = jl_extremes(spec, tau, lambda_min, lambda_max)
        return cls(lambda_min, lambda_max, condition_bound(tau, lambda_min), lo, hi,
                   dft_scaling_condition(spec.alpha, spec.ell))


def condition_bound(tau: float, lambda_min: float) -> float:
    """Upper bound ``1 + 1/(tau*lambda_min)`` on the condition number of J for SPD K."""
    if not (tau > 0 and lambda_min > 0):
        raise ParameterError(f"tau and lambda_min must be positive, got {tau}, {lambda_min}")
    return 1.0 + 1.0 / (tau * lambda_min)


def _jl_eigen(spec: TimeSpectrum, tau: float, lam: float, accel_scale: float = 1.0):
    g = spec.gammas[0]
    val = 1.0 + accel_scale * np.sum(g / (1.0 - spec.pis + tau * lam))
    return val


def jl_extremes(spec: TimeSpectrum, tau: float, lambda_min: float, lambda_max: float):
    """Extreme eigenvalues of J for SPD K with spectrum in ``[lambda_min, lambda_max]``.

    J is a function of K, so each eigenvalue of K maps to one of J; the extremes
    are attained at the ends of the spectrum of K.
    """
    lo = _jl_eigen(spec, tau, lambda_max)
    hi = _jl_eigen(spec, tau, lambda_min)
    imag = max(abs(lo.imag), abs(hi.imag))
    if imag > 1e-12 * max(1.0, abs(lo), abs(hi)):
        raise ValueError(f"J eigenvalue sums are not real (imaginary part {imag:.3e})")
    return float(lo.real), float(hi.real)


def _dense(K) -> np.ndarray:
    return K.toarray() if sp.issparse(K) else np.asarray(K)


def dense_jl(K, spec: TimeSpectrum, taubeta: float, accel_scale: Optional[float] = None) -> np.ndarray:
    """Assemble ``I + a * sum_{k,h} gamma^(k) theta^(h) R_i`` densely (block form for s > 1).

    The result is ``s*n_bar`` square with block ``(k, h)`` acting from ``x^(h)``
    to row block ``k``.
    """
    Kd = _dense(K)
    n = Kd.shape[0]
    if n > DENSE_JL_MAX:
        raise OracleSizeError(f"dense_jl refuses n_bar={n} > {DENSE_JL_MAX}")
    a = spec.accel_scale if accel_scale is None else accel_scale
    s = spec.s
    thetas = spec.thetas if s > 1 else np.ones((1, spec.ell))
    J = np.eye(s * n, dtype=complex)
    eye = np.eye(n)
    for i, pi in enumerate(spec.pis):
        R = np.linalg.inv((1.0 - pi) * eye + taubeta * Kd)
        for k in range(s):
            for h in range(s):
                J[k * n:(k + 1) * n, h * n:(h + 1) * n] += a * spec.gammas[k, i] * thetas[h, i] * R
    return J


def lambda_min_spd(K, tol: float = 1e-8, maxiter: int = 500, seed: int = 0) -> float:
    """Smallest eigenvalue of an SPD matrix by inverse power iteration.

    One sparse factorization of ``K`` is reused for every sweep; the iteration
    stops when the Rayleigh quotient changes by at most ``tol`` relatively.
    """
    K = sp.csc_matrix(K)
    lu = spla.splu(K)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(K.shape[0])
    v /= np.linalg.norm(v)
    rq = float(v @ (K @ v))
    for _ in range(maxiter):
        w = lu.solve(v)
        v = w / np.linalg.norm(w)
        new = float(v @ (K @ v))
        if abs(new - rq) <= tol * abs(new):
            return new
        rq = new
    raise EstimationError(f"inverse iteration did not settle in {maxiter} sweeps", rq)


def dft_scaling_condition(alpha: float, ell: int) -> float:
    """Condition number ``alpha**(-(ell-1)/ell)`` of the scaled DFT ``F D_alpha``."""
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha ** (-(ell - 1) / ell))


def sequential_oracle(problem: SpatialProblem, scheme: SchemeLike, tau: float, ell: int,
                      history: Sequence[np.ndarray], t0: float = 0.0) -> np.ndarray:
    """Reference solution by stepping the BDF recurrence one step at a time."""
    scheme = as_scheme(scheme)
    s = scheme.s
    if len(history) != s:
        raise ValueError(f"BDF{s} needs {s} history vectors, got {len(history)}")
    a = scheme.alphas_float
    tb = tau * scheme.beta_float
    n = problem.n_bar
    lu = spla.splu(sp.csc_matrix(sp.identity(n) + tb * problem.K))
    states = [np.asarray(h, dtype=float) for h in history]
    U = np.empty((n, ell))
    for j in range(1, ell + 1):
        rhs = tb * problem.forcing(j, tau, t0)
        for k in range(1, s + 1):
            rhs = rhs + a[k - 1] * states[-k]
        states.append(lu.solve(rhs))
        U[:, j - 1] = states[-1]
    return U


def dense_allatonce_matrix(problem: SpatialProblem, scheme: SchemeLike, tau: float,
                           ell: int) -> np.ndarray:
    """``I (x) (I + tau*beta*K) - Sigma_s (x) I`` acting on ``vec(U)`` (column stacking)."""
    scheme = as_scheme(scheme)
    n = problem.n_bar
    if n * ell > DENSE_ALLATONCE_MAX:
        raise OracleSizeError(f"dense all-at-once matrix refused for n_bar*ell={n * ell}")
    Kd = _dense(problem.K)
    sigma = build_sigma(scheme, ell).toarray() if ell > scheme.s else np.zeros((ell, ell))
    A = np.eye(n) + tau * scheme.beta_float * Kd
    return np.kron(np.eye(ell), A) - np.kron(sigma, np.eye(n))


def dense_allatonce(problem: SpatialProblem, scheme: SchemeLike, tau: float, ell: int,
                    history: Sequence[np.ndarray], t0: float = 0.0) -> np.ndarray:
    """Solve the all-at-once system by dense LU on its Kronecker form."""
    M = dense_allatonce_matrix(problem, scheme, tau, ell)
    G = bdf_rhs(problem, scheme, tau, ell, history, t0)
    u = scipy.linalg.solve(M, G.reshape(-1, order="F"))
    return u.reshape(problem.n_bar, ell, order="F")
