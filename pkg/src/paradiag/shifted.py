"""Block-diagonal solves with ``(1 - pi_i) I + tau*beta*K`` for all time modes.

Every application of the block-diagonal operator to a full set of ``ell``
right-hand sides is one parallel-in-time loop, counted by :class:`PinTLedger`.
"""

import ctypes
import ctypes.util
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ParameterError, SingularShiftError


def default_workers() -> int:
    env = os.environ.get("PARADIAG_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n < 1:
            raise ParameterError(f"PARADIAG_WORKERS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _trim_heap():
    # glibc keeps freed factor storage mapped; hand it back to the OS
    name = ctypes.util.find_library("c")
    if not name:
        return
    try:
        libc = ctypes.CDLL(name)
        if hasattr(libc, "malloc_trim"):
            libc.malloc_trim(0)
    except OSError:
        pass


@dataclass
class PinTLedger:
    """Monotone count of parallel-in-time loops."""

    loops: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def tick(self, n: int = 1) -> int:
        with self._lock:
            self.loops += n
            return self.loops


class ShiftBank:
    """Sparse LU factorizations of ``sigma_i I + taubeta K`` for ``sigma_i = 1 - pi_i``.

    With ``conjugate_pairs=True`` only one member of each conjugate pair of
    shifts is factorized; solves with the partner use ``conj(solve(conj(v)))``,
    which is exact for real ``K``.
    """

    # minimum degree on A^T + A suits the structurally symmetric stencils used here
    permc_spec = "MMD_AT_PLUS_A"
    # favour diagonal pivots so the ordering survives convection-dominated K
    diag_pivot_thresh = 0.1

    def __init__(self, K, pis, taubeta: float, workers: Optional[int] = None,
                 conjugate_pairs: bool = False):
        if not taubeta > 0:
            raise ParameterError(f"tau*beta must be positive, got {taubeta}")
        self.K = sp.csc_matrix(K)
        self.pis = np.asarray(pis, dtype=complex)
        self.shifts = 1.0 - self.pis
        self.taubeta = float(taubeta)
        self.workers = workers or default_workers()
        self.reuse_count = 0
        self._partner = self._pair_map() if conjugate_pairs else list(range(len(self.pis)))
        self._lu: List[Optional[object]] = [None] * len(self.pis)
        self._factor()

    @property
    def ell(self) -> int:
        return len(self.pis)

    @property
    def n_bar(self) -> int:
        return self.K.shape[0]

    def _pair_map(self):
        partner = list(range(self.ell))
        for i in range(self.ell):
            if partner[i] != i:
                continue
            for j in range(i + 1, self.ell):
                if partner[j] == j and abs(self.shifts[j] - np.conj(self.shifts[i])) <= 1e-14 * (1 + abs(self.shifts[i])):
                    partner[j] = i
                    break
        return partner

    def _factor_one(self, i):
        n = self.n_bar
        A = (self.shifts[i] * sp.identity(n, dtype=complex, format="csc")
             + self.taubeta * self.K).tocsc()
        try:
            lu = spla.splu(A, permc_spec=self.permc_spec,
                           diag_pivot_thresh=self.diag_pivot_thresh)
        except RuntimeError as exc:
            raise SingularShiftError(i, self.shifts[i]) from exc
        diag = np.abs(lu.U.diagonal())
        if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * max(diag.max(), 1e-300):
            raise SingularShiftError(i, self.shifts[i])
        return lu

    def _factor(self):
        # Factorizations stay on the calling thread: SuperLU memory allocated on
        # a worker thread is not returned to the OS when freed from another one.
        for i in range(self.ell):
            if self._partner[i] == i:
                self._lu[i] = self._factor_one(i)

    def release(self):
        """Drop all factorizations; the bank cannot be used afterwards."""
        self._lu = [None] * self.ell
        _trim_heap()

    def solve(self, i: int, v: np.ndarray) -> np.ndarray:
        """Solve with the i-th shifted matrix; ``v`` may hold several columns."""
        owner = self._partner[i]
        if self._lu[owner] is None:
            raise RuntimeError("shift bank has been released")
        v = np.asarray(v, dtype=complex)
        if owner == i:
            return self._lu[i].solve(v)
        return np.conj(self._lu[owner].solve(np.conj(v)))

    def _map(self, fn):
        if self.workers == 1:
            return [fn(i) for i in range(self.ell)]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, range(self.ell)))


def factor_all(K, spec, taubeta: float, workers: Optional[int] = None,
               conjugate_pairs: bool = False) -> ShiftBank:
    """Factorize every shifted system of ``spec`` (a :class:`TimeSpectrum`)."""
    return ShiftBank(K, spec.pis, taubeta, workers=workers, conjugate_pairs=conjugate_pairs)


def pint_sweep(bank: ShiftBank, rhs: np.ndarray, ledger: PinTLedger) -> np.ndarray:
    """Column i of the result is ``(sigma_i I + taubeta K)^{-1} rhs[:, i]``."""
    rhs = np.asarray(rhs)
    if rhs.shape != (bank.n_bar, bank.ell):
        raise ValueError(f"expected rhs of shape {(bank.n_bar, bank.ell)}, got {rhs.shape}")
    out = np.empty(rhs.shape, dtype=complex)

    def work(i):
        out[:, i] = bank.solve(i, rhs[:, i])

    bank._map(work)
    bank.reuse_count += 1
    ledger.tick()
    return out


def pint_sweep_single_rhs(bank: ShiftBank, v: np.ndarray, ledger: PinTLedger) -> np.ndarray:
    """Solve every shifted system with the same right-hand side ``v``."""
    v = np.asarray(v)
    out = np.empty((bank.n_bar, bank.ell), dtype=complex)

    def work(i):
        out[:, i] = bank.solve(i, v)

    bank._map(work)
    bank.reuse_count += 1
    ledger.tick()
    return out


def pint_sweep_block(bank: ShiftBank, V: np.ndarray, ledger: PinTLedger) -> np.ndarray:
    """Solve every shifted system with the same block ``V`` (n_bar x s).

    Returns an array of shape ``(ell, n_bar, s)``.
    """
    V = np.asarray(V)
    out = np.empty((bank.ell,) + V.shape, dtype=complex)

    def work(i):
        out[i] = bank.solve(i, V)

    bank._map(work)
    bank.reuse_count += 1
    ledger.tick()
    return out
