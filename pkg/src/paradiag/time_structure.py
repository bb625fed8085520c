"""Discrete time operators of BDF schemes and their Fourier spectra.

The all-at-once form of an order-``s`` BDF scheme on ``ell`` uniform steps is

    (I + tau*beta*K) U - U Sigma_s^T = G,

where ``Sigma_s`` is lower triangular with the BDF weight ``alpha_j`` on its
j-th subdiagonal.  ``Sigma_s`` is an (alpha-)circulant matrix minus a rank-s
corner block, and the circulant part is diagonalized by the DFT matrix

    F[j, k] = omega**(j*k),   omega = exp(-2j*pi/ell),

i.e. ``F @ x == scipy.fft.fft(x)``.  With this convention ``F @ e_1`` is the
all-ones vector and ``F^{-1} = conj(F) / ell``.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple, Union

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .errors import (OrderUnsupportedError, ParameterError, SizeError,
                     UnsupportedCombinationError)

# (beta, alpha_1..alpha_s) as integer pairs; signs chosen so that the scheme
# reads (I + tau*beta*K) u_j - sum_k alpha_k u_{j-k} = tau*beta*f_j.
_BDF_TABLE = {
    1: ((1, 1), [(1, 1)]),
    2: ((2, 3), [(4, 3), (-1, 3)]),
    3: ((6, 11), [(18, 11), (-9, 11), (2, 11)]),
    4: ((12, 25), [(48, 25), (-36, 25), (16, 25), (-3, 25)]),
    5: ((60, 137), [(300, 137), (-300, 137), (200, 137), (-75, 137), (12, 137)]),
    6: ((60, 147), [(360, 147), (-450, 147), (400, 147), (-225, 147), (72, 147),
                    (-10, 147)]),
}

MAX_ORDER = 6


@dataclass(frozen=True)
class BdfScheme:
    """Coefficients of a BDF scheme, kept as exact rationals."""

    s: int
    beta: Fraction
    alphas: Tuple[Fraction, ...]

    @property
    def beta_float(self) -> float:
        return float(self.beta)

    @property
    def alphas_float(self) -> np.ndarray:
        return np.array([float(a) for a in self.alphas])

    def corner_block(self) -> np.ndarray:
        """The s-by-s upper triangular block removed from the circulant.

        Row ``r`` (0-based) holds ``alpha_s, ..., alpha_{r+1}`` starting on the
        diagonal, so row 0 is ``[alpha_s, ..., alpha_1]``.
        """
        s = self.s
        a = self.alphas_float
        block = np.zeros((s, s))
        for r in range(s):
            for q in range(r, s):
                block[r, q] = a[r + s - q - 1]
        return block


def bdf_coefficients(s: int) -> BdfScheme:
    """Return the BDF scheme of order ``s`` (1 <= s <= 6).

    Orders above six are zero-unstable and are rejected.
    """
    if s not in _BDF_TABLE:
        raise OrderUnsupportedError(f"BDF order must be in 1..{MAX_ORDER}, got {s}")
    (bn, bd), alist = _BDF_TABLE[s]
    return BdfScheme(s, Fraction(bn, bd), tuple(Fraction(n, d) for n, d in alist))


SchemeLike = Union[int, BdfScheme]


def as_scheme(scheme: SchemeLike) -> BdfScheme:
    if isinstance(scheme, BdfScheme):
        return scheme
    return bdf_coefficients(int(scheme))


def _check_sizes(scheme: BdfScheme, ell: int):
    if ell < scheme.s + 1:
        raise SizeError(f"need ell >= s + 1 = {scheme.s + 1}, got ell={ell}")


def _check_alpha(scheme: BdfScheme, alpha: float):
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha != 1.0 and scheme.s > 1:
        raise UnsupportedCombinationError(
            "alpha-circulant splitting is only defined for backward Euler (s=1)")


def build_sigma(scheme: SchemeLike, ell: int) -> sp.csr_matrix:
    """Sparse lower triangular time operator ``Sigma_s`` of size ``ell``."""
    scheme = as_scheme(scheme)
    _check_sizes(scheme, ell)
    a = scheme.alphas_float
    diags = [np.full(ell - j, a[j - 1]) for j in range(1, scheme.s + 1)]
    return sp.diags(diags, offsets=[-j for j in range(1, scheme.s + 1)],
                    shape=(ell, ell), format="csr")


@dataclass(frozen=True)
class LowRankTimeSplit:
    """``Sigma_s = C - left_factor @ right_factor.T`` with ``C`` (alpha-)circulant.

    ``circulant_first_column`` is the first column of ``C``; for alpha < 1 the
    top-right corner of ``C`` is scaled by alpha, so ``C`` is not circulant in
    the strict sense and :meth:`circulant` should be used to assemble it.
    """

    circulant_first_column: np.ndarray
    left_factor: np.ndarray
    right_factor: np.ndarray
    rank: int
    alpha: float = 1.0

    def circulant(self) -> np.ndarray:
        ell = len(self.circulant_first_column)
        c = self.circulant_first_column
        idx = (np.arange(ell)[:, None] - np.arange(ell)[None, :]) % ell
        C = c[idx].astype(complex)
        upper = np.triu(np.ones((ell, ell), dtype=bool), 1)
        C[upper] *= self.alpha
        return C

    def reassemble(self) -> np.ndarray:
        return self.circulant() - self.left_factor @ self.right_factor.T


def split_time_operator(scheme: SchemeLike, ell: int, alpha: float = 1.0) -> LowRankTimeSplit:
    """Split ``Sigma_s`` into an (alpha-)circulant plus a rank-s correction."""
    scheme = as_scheme(scheme)
    _check_sizes(scheme, ell)
    _check_alpha(scheme, alpha)
    s = scheme.s
    c = np.zeros(ell, dtype=complex)
    c[1:s + 1] = scheme.alphas_float
    left = np.zeros((ell, s))
    left[:s, :] = scheme.corner_block()
    if s == 1:
        left *= alpha
    right = np.zeros((ell, s))
    right[ell - s:, :] = np.eye(s)
    return LowRankTimeSplit(c, left, right, s, alpha)


@dataclass(frozen=True)
class TimeSpectrum:
    """Fourier data of the time operator used by every ParaDiag phase.

    ``gammas[k]`` and ``thetas[k]`` are the k-th columns of the time parts of
    the low-rank factors ``N`` and ``M``; for backward Euler they reduce to
    ``F^{-T} e_ell`` and the all-ones vector.
    """

    ell: int
    s: int
    alpha: float
    pis: np.ndarray
    gammas: np.ndarray
    thetas: np.ndarray
    d_alpha: np.ndarray
    scheme: BdfScheme

    @property
    def accel_scale(self) -> float:
        """Weight ``alpha**(1/ell)`` of the low-rank correction."""
        return self.alpha ** (1.0 / self.ell)

    @property
    def taubeta_factor(self) -> float:
        return self.scheme.beta_float


def dft_matrix(ell: int) -> np.ndarray:
    """Dense unnormalized DFT matrix (test oracle, small ``ell`` only)."""
    j = np.arange(ell)
    return np.exp(-2j * np.pi * np.outer(j, j) / ell)


def spectrum(scheme: SchemeLike, ell: int, alpha: float = 1.0, check: bool = False) -> TimeSpectrum:
    """Eigenvalues and low-rank weights of the split time operator.

    With ``check=True`` the diagonalization is verified against a dense DFT
    (only for ``ell <= 64``).
    """
    scheme = as_scheme(scheme)
    if ell == 1 and scheme.s == 1:
        _check_alpha(scheme, alpha)
        one = np.ones((1, 1), dtype=complex)
        return TimeSpectrum(1, 1, alpha, np.array([alpha + 0j]), one, one.copy(),
                            np.ones(1), scheme)
    split = split_time_operator(scheme, ell, alpha)
    s = scheme.s
    if s == 1:
        omega = np.exp(-2j * np.pi * np.arange(ell) / ell)
        pis = alpha ** (1.0 / ell) * omega
    else:
        pis = scipy.fft.fft(split.circulant_first_column)
    # N = F^{-1} E_R A_s^T: column k of the time factor gives gamma^(k).
    n_time = split.right_factor @ scheme.corner_block().T
    gammas = scipy.fft.ifft(n_time, axis=0).T.copy()
    eye_s = np.zeros((ell, s))
    eye_s[:s, :] = np.eye(s)
    thetas = scipy.fft.fft(eye_s, axis=0).T.copy()
    d_alpha = alpha ** (np.arange(ell) / ell)
    spec = TimeSpectrum(ell, s, alpha, pis, gammas, thetas, d_alpha, scheme)
    if check and ell <= 64:
        _self_test(spec, split)
    return spec


def _self_test(spec: TimeSpectrum, split: LowRankTimeSplit):
    F = dft_matrix(spec.ell)
    D = np.diag(spec.d_alpha)
    C = split.circulant()
    rebuilt = np.linalg.solve(F @ D, np.diag(spec.pis) @ F @ D)
    if np.max(np.abs(rebuilt - C)) > 1e-11 * max(1.0, np.linalg.norm(C)):
        raise AssertionError("DFT convention self-test failed")


def time_transform(U: np.ndarray, direction: str = "forward", alpha: float = 1.0) -> np.ndarray:
    """Apply the (scaled) DFT along the time axis (columns) of ``U``.

    ``forward`` computes ``U D_alpha F^T``; ``inverse`` computes
    ``U F^{-T} D_alpha^{-1}``.  Any number of columns is accepted.
    """
    ell = U.shape[-1]
    d = alpha ** (np.arange(ell) / ell)
    if direction == "forward":
        return scipy.fft.fft(U * d, axis=-1)
    if direction == "inverse":
        return scipy.fft.ifft(U, axis=-1) / d
    raise ValueError(f"unknown direction {direction!r}")
