"""ParaDiag drivers: circulant splitting, Sherman-Morrison-Woodbury correction, realification.

Every driver follows the same skeleton

1. one sweep ``L = P^{-1}(G D_alpha F^T)`` giving the circulant part ``U_1``;
2. the reduced system for the low-rank correction, solved by the Krylov
   projection of :mod:`paradiag.krylov` (one sweep per residual check);
3. one sweep ``W = P^{-1} M x`` and ``U = U_1 - a * W F^{-T} D_alpha^{-1}``.

so a full solve costs ``checks + 2`` parallel-in-time loops.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, ParameterError
from .krylov import InnerSolveResult, block_fom_solve, fom_solve
from .shifted import (PinTLedger, ShiftBank, factor_all, pint_sweep,
                      pint_sweep_single_rhs)
from .spatial import SpatialProblem, bdf_rhs
from .time_structure import (SchemeLike, as_scheme, build_sigma, spectrum,
                             time_transform)

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    U: np.ndarray
    pint_loops: int
    inner_iterations: int
    rel_residual: float
    u1_norm: float
    u2_norm: float
    imag_residue: float
    early_exit: bool = False
    res_u1: float = np.nan
    inner: Optional[InnerSolveResult] = None
    G: Optional[np.ndarray] = None
    t0: float = 0.0

    @property
    def inner_rel_residual(self) -> float:
        return self.inner.rel_residual if self.inner is not None else np.nan


def expected_pint_loops(report: SolveReport) -> int:
    """Loop count predicted from the iteration count alone.

    ``m/q + 2`` for a full solve (a final check is added when the iteration
    limit is not a multiple of ``q``; a happy breakdown needs no check), 2 for
    the ``x = b`` shortcut and 1 for the early exit.
    """
    if report.early_exit:
        return 1
    inner = report.inner
    if inner is None:
        return 2
    m, q = inner.iterations, inner.q
    if inner.status == "breakdown":
        checks = (m - 1) // q
    else:
        checks = -(-m // q)
    return checks + 2


def allatonce_residual(problem: SpatialProblem, U: np.ndarray, tau: float,
                       scheme: SchemeLike, G: np.ndarray, normalization: str = "G") -> float:
    """Frobenius norm of ``(I + tau*beta*K) U - U Sigma_s^T - G``, relative.

    ``normalization`` is ``"G"`` (default) or ``"U"`` (the early-exit test
    divides by ``||U||_F``).
    """
    scheme = as_scheme(scheme)
    R = _allatonce_apply(problem.K, tau * scheme.beta_float, scheme, U) - G
    denom = np.linalg.norm(G) if normalization == "G" else np.linalg.norm(U)
    res = np.linalg.norm(R)
    return float(res / denom) if denom > 0 else float(res)


def _allatonce_apply(K, taubeta, scheme, X):
    ell = X.shape[1]
    if ell > scheme.s:
        sigma = build_sigma(scheme, ell)
    else:
        sigma = sp.csr_matrix((ell, ell))
    return X + taubeta * (K @ X) - (sigma @ X.T).T


def _default_tau(ell, tau):
    tau = 1.0 / ell if tau is None else tau
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    return tau


def _inner_ref_norm(criterion: str, u1_norm: float, scale: float) -> Optional[float]:
    # The all-at-once residual of U equals scale * ||r|| for the inner residual r.
    if criterion == "rhs":
        return None
    if criterion == "allatonce":
        return u1_norm / scale
    raise ParameterError(f"inner_criterion must be 'rhs' or 'allatonce', got {criterion!r}")


def _check_inner(inner: InnerSolveResult, report: SolveReport, strict: bool):
    if strict and not inner.converged:
        raise ConvergenceError(
            f"inner solve stopped after {inner.iterations} iterations "
            f"({inner.status}, residual {inner.rel_residual:.3e})", report)


def solve_be_alpha(problem: SpatialProblem, ell: int, tau: Optional[float] = None,
                   alpha: float = 1e-4, eps: float = 1e-8, q: int = 1, maxit: int = 100,
                   skip_correction: bool = False, early_exit: bool = True,
                   bank: Optional[ShiftBank] = None, strict: bool = True,
                   workers: Optional[int] = None,
                   inner_criterion: str = "allatonce") -> SolveReport:
    """Backward Euler ParaDiag with alpha-circulant splitting.

    Returns after one loop if ``U_1`` alone already satisfies
    ``||res(U_1)||_F <= eps*||U_1||_F`` (and ``early_exit`` is on).  With
    ``skip_correction`` the reduced system is replaced by the identity
    (``x = b``), which costs exactly two loops.  A non-converged inner solve
    raises :class:`ConvergenceError` carrying the partial report unless
    ``strict`` is off.

    ``inner_criterion="allatonce"`` stops the inner solve once the implied
    all-at-once residual ``a*||r||`` is below ``eps*||U_1||_F`` (the same
    normalization as the early-exit test); ``"rhs"`` uses ``eps*||b||``.
    """
    tau = _default_tau(ell, tau)
    _inner_ref_norm(inner_criterion, 1.0, 1.0)
    spec = spectrum(1, ell, alpha)
    own_bank = bank is None
    if own_bank:
        bank = factor_all(problem.K, spec, tau, workers=workers)
    try:
        ledger = PinTLedger()
        G = bdf_rhs(problem, 1, tau, ell, [problem.u0])

        L = pint_sweep(bank, time_transform(G, "forward", alpha), ledger)
        U1c = time_transform(L, "inverse", alpha)
        U1 = U1c.real
        u1_norm = float(np.linalg.norm(U1))
        res_u1 = allatonce_residual(problem, U1, tau, 1, G)
        if early_exit:
            res_u1_own = allatonce_residual(problem, U1, tau, 1, G, normalization="U")
            if res_u1_own <= eps:
                return SolveReport(U1, ledger.loops, 0, res_u1, u1_norm, 0.0,
                                   float(np.max(np.abs(U1c.imag), initial=0.0)),
                                   early_exit=True, res_u1=res_u1, G=G)

        b = L @ spec.gammas[0]
        a = spec.accel_scale
        inner = None
        if skip_correction:
            x = b.real
        else:
            inner = fom_solve(problem.K, spec, tau, b.real, bank, ledger, eps=eps, maxit=maxit, q=q,
                              ref_norm=_inner_ref_norm(inner_criterion, u1_norm, a))
            x = inner.x
        W = pint_sweep_single_rhs(bank, x, ledger)
        U2c = -a * time_transform(W, "inverse", alpha)
        Uc = U1c + U2c
        U = Uc.real
        report = SolveReport(
            U, ledger.loops, inner.iterations if inner else 0,
            allatonce_residual(problem, U, tau, 1, G), u1_norm,
            float(np.linalg.norm(U2c.real)), float(np.max(np.abs(Uc.imag), initial=0.0)),
            early_exit=False, res_u1=res_u1, inner=inner, G=G)
        log.debug("alpha=%g loops=%d inner=%d res=%.3e", alpha, report.pint_loops,
                  report.inner_iterations, report.rel_residual)
        if inner is not None:
            _check_inner(inner, report, strict)
        return report
    finally:
        if own_bank:
            bank.release()


def solve_be(problem: SpatialProblem, ell: int, tau: Optional[float] = None,
             eps: float = 1e-8, q: int = 1, maxit: int = 100,
             bank: Optional[ShiftBank] = None, strict: bool = True,
             workers: Optional[int] = None) -> SolveReport:
    """Backward Euler ParaDiag with the plain circulant splitting (``alpha = 1``)."""
    return solve_be_alpha(problem, ell, tau, alpha=1.0, eps=eps, q=q, maxit=maxit,
                          early_exit=False, bank=bank, strict=strict, workers=workers,
                          inner_criterion="rhs")


def warmup_history(problem: SpatialProblem, s: int, tau: float):
    """``[u_0, u_1, ..., u_{s-1}]`` from ``s - 1`` backward Euler steps starting at ``t = 0``."""
    hist = [np.asarray(problem.u0, dtype=float)]
    if s > 1:
        n = problem.n_bar
        lu = spla.splu(sp.csc_matrix(sp.identity(n) + tau * problem.K))
        for k in range(1, s):
            hist.append(lu.solve(hist[-1] + tau * problem.source(k * tau)))
    return hist


def solve_bdf(problem: SpatialProblem, ell: int, tau: Optional[float] = None,
              s: SchemeLike = 2, eps: float = 1e-8, q: int = 1, maxit: int = 100,
              history: Optional[Sequence[np.ndarray]] = None, t0: Optional[float] = None,
              bank: Optional[ShiftBank] = None, strict: bool = True,
              workers: Optional[int] = None, inner_criterion: str = "rhs") -> SolveReport:
    """ParaDiag for an order-s BDF scheme (circulant plus rank-s splitting).

    ``history`` is ``[u_{1-s}, ..., u_0]`` with ``u_0`` at time ``t0``.  When it
    is omitted the history is produced by ``s - 1`` backward Euler steps from
    the initial state, and the time origin of the returned columns moves to
    ``t0 = (s - 1) * tau``.  ``s`` may also be a :class:`BdfScheme` with
    custom coefficients.
    """
    scheme = as_scheme(s)
    tau = _default_tau(ell, tau)
    _inner_ref_norm(inner_criterion, 1.0, 1.0)
    if history is None:
        history = warmup_history(problem, scheme.s, tau)
        t0 = (scheme.s - 1) * tau if t0 is None else t0
    t0 = 0.0 if t0 is None else t0
    taubeta = tau * scheme.beta_float
    spec = spectrum(scheme, ell, 1.0)
    own_bank = bank is None
    if own_bank:
        bank = factor_all(problem.K, spec, taubeta, workers=workers)
    try:
        ledger = PinTLedger()
        G = bdf_rhs(problem, scheme, tau, ell, history, t0)

        L = pint_sweep(bank, time_transform(G, "forward"), ledger)
        U1c = time_transform(L, "inverse")
        B = L @ spec.gammas.T
        u1_norm = float(np.linalg.norm(U1c.real))
        inner = block_fom_solve(problem.K, spec, taubeta, B.real, bank, ledger,
                                eps=eps, maxit=maxit, q=q,
                                ref_norm=_inner_ref_norm(inner_criterion, u1_norm, 1.0))
        W = pint_sweep(bank, inner.x @ spec.thetas, ledger)
        U2c = -time_transform(W, "inverse")
        Uc = U1c + U2c
        U = Uc.real
        report = SolveReport(
            U, ledger.loops, inner.iterations,
            allatonce_residual(problem, U, tau, scheme, G),
            u1_norm, float(np.linalg.norm(U2c.real)),
            float(np.max(np.abs(Uc.imag), initial=0.0)),
            res_u1=allatonce_residual(problem, U1c.real, tau, scheme, G),
            inner=inner, G=G, t0=t0)
        _check_inner(inner, report, strict)
        return report
    finally:
        if own_bank:
            bank.release()
