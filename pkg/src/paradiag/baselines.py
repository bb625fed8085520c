"""Preconditioned GMRES on the all-at-once system, the reference ParaDiag method.

The preconditioner replaces ``Sigma_s`` by its circulant part, so applying its
inverse is an FFT in time, one sweep of shifted solves and an inverse FFT:
one parallel-in-time loop per application.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .driver import _allatonce_apply
from .errors import ParameterError
from .shifted import PinTLedger, ShiftBank, factor_all, pint_sweep
from .spatial import SpatialProblem, bdf_rhs
from .time_structure import SchemeLike, as_scheme, spectrum, time_transform

log = logging.getLogger(__name__)


@dataclass
class GmresReport:
    U: np.ndarray
    iterations: int
    pint_loops: int
    rel_residual: float
    residual_history: List[float] = field(default_factory=list)
    converged: bool = False


def allatonce_apply(problem: SpatialProblem, tau: float, scheme: SchemeLike, X: np.ndarray) -> np.ndarray:
    """``(I + tau*beta*K) X - X Sigma_s^T`` without forming the Kronecker matrix."""
    scheme = as_scheme(scheme)
    return _allatonce_apply(problem.K, tau * scheme.beta_float, scheme, np.asarray(X))


def circulant_precond_apply(bank: ShiftBank, X: np.ndarray, ledger: PinTLedger) -> np.ndarray:
    """Inverse of the circulant all-at-once operator applied to ``X`` (one loop).

    The bank must hold the shifts ``1 - pi_i`` of the alpha = 1 spectrum.
    """
    Y = pint_sweep(bank, time_transform(X, "forward"), ledger)
    out = time_transform(Y, "inverse")
    return out.real if np.isrealobj(X) else out


def _givens(a, b):
    if b == 0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_allatonce(problem: SpatialProblem, tau: float, ell: int, scheme: SchemeLike = 1,
                    eps: float = 1e-8, maxit: int = 200, ledger: Optional[PinTLedger] = None,
                    history=None, t0: float = 0.0, bank: Optional[ShiftBank] = None,
                    workers: Optional[int] = None) -> GmresReport:
    """Right-preconditioned GMRES with Frobenius inner products and ``x0 = 0``.

    Right preconditioning leaves the residual unpreconditioned, so the
    stopping test ``||G - A U|| <= eps ||G||`` is on the true residual.
    Each Arnoldi step costs one preconditioner application and forming the
    final iterate costs one more, so ``p`` iterations use ``p + 1`` loops.
    ``history`` defaults to ``[u0]`` repeated for BDF orders above one.
    """
    scheme = as_scheme(scheme)
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if maxit < 0:
        raise ParameterError(f"maxit must be non-negative, got {maxit}")
    ledger = PinTLedger() if ledger is None else ledger
    start = ledger.loops
    taubeta = tau * scheme.beta_float
    own_bank = bank is None
    if own_bank:
        bank = factor_all(problem.K, spectrum(scheme, ell, 1.0), taubeta, workers=workers)
    try:
        if history is None:
            history = [problem.u0] * scheme.s
        G = bdf_rhs(problem, scheme, tau, ell, history, t0)
        gnorm = float(np.linalg.norm(G))

        def matvec(X):
            return allatonce_apply(problem, tau, scheme, X)

        def finish(U, p, hist, converged):
            res = float(np.linalg.norm(matvec(U) - G) / gnorm) if gnorm > 0 else 0.0
            return GmresReport(U, p, ledger.loops - start, res, hist, converged)

        if gnorm == 0:
            return GmresReport(np.zeros_like(G), 0, 0, 0.0, [0.0], True)
        if eps >= 1.0:
            return finish(circulant_precond_apply(bank, G, ledger), 0, [1.0], True)

        V = [G / gnorm]
        H = np.zeros((maxit + 1, maxit))
        cs = np.zeros(maxit)
        sn = np.zeros(maxit)
        g = np.zeros(maxit + 1)
        g[0] = gnorm
        hist = [1.0]
        p = 0
        converged = False
        for j in range(maxit):
            W = matvec(circulant_precond_apply(bank, V[j], ledger))
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], W).real
                W = W - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(W)
            for i in range(j):
                a, b = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * a + sn[i] * b
                H[i + 1, j] = -sn[i] * a + cs[i] * b
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            p = j + 1
            hist.append(abs(g[j + 1]) / gnorm)
            if abs(g[j + 1]) <= eps * gnorm:
                converged = True
                break
            beta = np.linalg.norm(W)
            if beta == 0:
                converged = True
                break
            V.append(W / beta)

        if p == 0:
            return finish(np.zeros_like(G), 0, hist, converged)
        y = np.linalg.solve(np.triu(H[:p, :p]), g[:p])
        Z = sum(yi * Vi for yi, Vi in zip(y, V[:p]))
        U = circulant_precond_apply(bank, Z, ledger)
        report = finish(U, p, hist, converged)
        log.debug("gmres p=%d loops=%d res=%.3e", p, report.pint_loops, report.rel_residual)
        return report
    finally:
        if own_bank:
            bank.release()
