import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import random_spd
from paradiag.analysis import dense_jl
from paradiag.krylov import (ArnoldiBasis, BlockArnoldiBasis, apply_jl, arnoldi_extend,
                             block_fom_solve, fom_solve, residual_certificate)
from paradiag.shifted import PinTLedger, factor_all
from paradiag.spatial import advdiff2d, heat2d
from paradiag.time_structure import spectrum


def _basis(K, b, m):
    basis = ArnoldiBasis(b)
    for _ in range(m):
        arnoldi_extend(K, basis)
    return basis


def test_arnoldi_orthonormal_and_relation(rng):
    K = sp.csr_matrix(rng.standard_normal((40, 40)))
    basis = _basis(K, rng.standard_normal(40), 12)
    V, T = basis.V, basis.T
    assert np.linalg.norm(V.T @ V - np.eye(12)) <= 1e-10
    E = np.zeros((1, 12))
    E[0, -1] = 1
    lhs = K @ V
    rhs = V @ T + basis.V_next @ basis.t_next @ E
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * sp.linalg.norm(K) * np.linalg.norm(V)


def test_eigenvector_breakdown():
    K = sp.diags([1.0, 2.0, 3.0, 4.0])
    basis = _basis(K, np.array([0.0, 0.0, 1.0, 0.0]), 1)
    assert basis.breakdown
    assert basis.T[0, 0] == pytest.approx(3.0)
    with pytest.raises(RuntimeError):
        arnoldi_extend(K, basis)


def test_lanczos_structure(rng):
    K = sp.csr_matrix(random_spd(32, rng))
    basis = _basis(K, rng.standard_normal(32), 10)
    T = basis.T
    np.testing.assert_allclose(T, T.T, atol=1e-12)
    np.testing.assert_allclose(np.triu(T, 2), 0, atol=1e-12)
    # T is the projection of K on the basis
    np.testing.assert_allclose(T, basis.V.T @ (K @ basis.V), atol=1e-12)


def test_full_space(rng):
    K = sp.csr_matrix(rng.standard_normal((8, 8)))
    basis = ArnoldiBasis(rng.standard_normal(8))
    while not basis.breakdown and basis.m < 8:
        arnoldi_extend(K, basis)
    V = basis.V
    assert V.shape == (8, 8)
    np.testing.assert_allclose(V.T @ V, np.eye(8), atol=1e-12)
    np.testing.assert_allclose(K @ V, V @ basis.T, atol=1e-11)


def test_block_relation(rng):
    K = sp.csr_matrix(rng.standard_normal((30, 30)))
    basis = BlockArnoldiBasis(rng.standard_normal((30, 3)))
    for _ in range(5):
        basis.extend(K)
    V, T = basis.V, basis.T
    E = np.zeros((3, 15))
    E[:, 12:] = np.eye(3)
    assert np.linalg.norm(V.T @ V - np.eye(15)) <= 1e-10
    res = K @ V - V @ T - basis.V_next @ basis.t_next @ E
    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(K @ V)


def test_block_deflation(rng):
    b = rng.standard_normal(20)
    basis = BlockArnoldiBasis(np.column_stack([b, b]))
    assert basis.p == 1 and basis.deflated
    np.testing.assert_allclose(basis.V_next @ basis.beta0, np.column_stack([b, b]), atol=1e-12)


def test_zero_block_rejected():
    with pytest.raises(ValueError):
        BlockArnoldiBasis(np.zeros((5, 2)))


def _setup(K, ell, alpha=1.0, tau=None, s=1):
    tau = 1.0 / ell if tau is None else tau
    spec = spectrum(s, ell, alpha)
    from paradiag.time_structure import as_scheme
    taubeta = tau * as_scheme(s).beta_float
    return spec, taubeta, factor_all(K, spec, taubeta)


def test_heat_one_iteration():
    p = heat2d(32)
    spec, tb, bank = _setup(p.K, 32)
    b = np.random.default_rng(0).standard_normal(p.n_bar)
    res = fom_solve(p.K, spec, tb, b, bank, PinTLedger())
    assert res.converged and res.iterations == 1
    assert res.rel_residual < 1e-8


def test_scalar_spectrum_exact():
    lam, ell = 3.0, 6
    K = sp.identity(10, format="csr") * lam
    spec, tb, bank = _setup(K, ell)
    b = np.arange(1.0, 11.0)
    res = fom_solve(K, spec, tb, b, bank, PinTLedger())
    factor = 1 + spec.accel_scale * np.sum(spec.gammas[0] / (1 - spec.pis + tb * lam))
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, b / factor, rtol=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 1e-2])
def test_fom_matches_dense_jl(rng, alpha):
    K = sp.csr_matrix(random_spd(24, rng))
    spec, tb, bank = _setup(K, 8, alpha)
    b = rng.standard_normal(24)
    res = fom_solve(K, spec, tb, b, bank, PinTLedger(), eps=1e-12)
    J = dense_jl(K, spec, tb)
    np.testing.assert_allclose(res.x, np.linalg.solve(J, b), rtol=0, atol=1e-8 * np.linalg.norm(b))


def test_fom_nonsymmetric_certificate():
    # a nonsymmetric K exercises the tau factor in the shifted Arnoldi remainder
    p = advdiff2d(10, 0.02)
    spec, tb, bank = _setup(p.K, 8, 1e-2, tau=0.3)
    b = np.random.default_rng(1).standard_normal(p.n_bar)
    res = fom_solve(p.K, spec, tb, b, bank, PinTLedger(), eps=1e-10, maxit=60)
    assert res.converged
    cert = residual_certificate(res, p.K, spec, tb, b, bank)
    assert cert == pytest.approx(res.rel_residual * np.linalg.norm(b), rel=1e-6, abs=1e-13)
    for m, r in res.residual_history[:4]:
        partial = fom_solve(p.K, spec, tb, b, bank, PinTLedger(), eps=0.0, maxit=m)
        direct = residual_certificate(partial, p.K, spec, tb, b, bank) / np.linalg.norm(b)
        assert direct == pytest.approx(r, rel=1e-9)


def test_galerkin_orthogonality():
    p = advdiff2d(8, 0.05)
    spec, tb, bank = _setup(p.K, 6, 1.0)
    b = np.random.default_rng(2).standard_normal(p.n_bar)
    res = fom_solve(p.K, spec, tb, b, bank, PinTLedger(), eps=0.0, maxit=3)
    r = apply_jl(bank, spec, res.x) - b
    V = res.basis.V
    assert np.linalg.norm(V.conj().T @ r) <= 1e-10 * np.linalg.norm(b)


def test_block_fom_matches_dense(rng):
    K = sp.csr_matrix(random_spd(16, rng))
    spec, tb, bank = _setup(K, 8, s=2)
    B = rng.standard_normal((16, 2))
    res = block_fom_solve(K, spec, tb, B, bank, PinTLedger(), eps=1e-12)
    J = dense_jl(K, spec, tb)
    ref = np.linalg.solve(J, B.T.reshape(-1)).reshape(2, 16).T
    np.testing.assert_allclose(res.x, ref, atol=1e-8 * np.linalg.norm(B))


def test_block_fom_deflated_column(rng):
    K = sp.csr_matrix(random_spd(16, rng))
    spec, tb, bank = _setup(K, 8, s=2)
    b = rng.standard_normal(16)
    B = np.column_stack([b, b])
    res = block_fom_solve(K, spec, tb, B, bank, PinTLedger(), eps=1e-12)
    assert res.deflated_width == 1
    J = dense_jl(K, spec, tb)
    ref = np.linalg.solve(J, B.T.reshape(-1)).reshape(2, 16).T
    np.testing.assert_allclose(res.x, ref, atol=1e-8 * np.linalg.norm(B))


def test_zero_rhs():
    p = heat2d(4)
    spec, tb, bank = _setup(p.K, 4, s=2)
    led = PinTLedger()
    res = block_fom_solve(p.K, spec, tb, np.zeros((16, 2)), bank, led)
    assert np.all(res.x == 0) and res.iterations == 0 and led.loops == 0


def test_certificate_trivial_cases(rng):
    K = sp.csr_matrix(random_spd(12, rng))
    spec, tb, bank = _setup(K, 5)
    b = rng.standard_normal(12)
    from paradiag.krylov import InnerSolveResult
    zero = InnerSolveResult(np.zeros(12), 0)
    assert residual_certificate(zero, K, spec, tb, b, bank) == pytest.approx(np.linalg.norm(b))
    exact = InnerSolveResult(np.linalg.solve(dense_jl(K, spec, tb), b), 0)
    assert residual_certificate(exact, K, spec, tb, b, bank) <= 1e-10 * np.linalg.norm(b)


def test_checks_every_q():
    p = advdiff2d(10, 0.01)
    spec, tb, bank = _setup(p.K, 8, 1.0, tau=0.5)
    b = np.random.default_rng(3).standard_normal(p.n_bar)
    one = fom_solve(p.K, spec, tb, b, bank, PinTLedger(), eps=1e-10, maxit=80)
    led = PinTLedger()
    three = fom_solve(p.K, spec, tb, b, bank, led, eps=1e-10, maxit=80, q=3)
    assert one.converged and three.converged
    assert [m % 3 for m, _ in three.residual_history[:-1]] == [0] * (len(three.residual_history) - 1)
    assert led.loops == three.checks == len(three.residual_history)
    assert three.checks <= one.checks
    np.testing.assert_allclose(three.x, one.x, atol=1e-8 * np.linalg.norm(one.x))
    with pytest.raises(ValueError):
        fom_solve(p.K, spec, tb, b, bank, PinTLedger(), q=0)


def test_ref_norm_stops_earlier():
    p = advdiff2d(10, 0.01)
    spec, tb, bank = _setup(p.K, 8, 1.0, tau=0.5)
    b = np.random.default_rng(4).standard_normal(p.n_bar)
    strict = fom_solve(p.K, spec, tb, b, bank, PinTLedger(), eps=1e-8)
    loose = fom_solve(p.K, spec, tb, b, bank, PinTLedger(), eps=1e-8, ref_norm=1e4 * np.linalg.norm(b))
    assert loose.iterations <= strict.iterations
    assert loose.rel_residual <= 1e-4


@settings(max_examples=15)
@given(n=st.integers(6, 20), ell=st.integers(2, 9), seed=st.integers(0, 2**16))
def test_energy_norm_error_monotone(n, ell, seed):
    # for SPD K and alpha = 1 the reduced operator is Hermitian positive definite,
    # so the Galerkin error in the J-norm cannot grow with m
    rng = np.random.default_rng(seed)
    K = sp.csr_matrix(random_spd(n, rng))
    spec, tb, bank = _setup(K, ell)
    J = dense_jl(K, spec, tb)
    b = rng.standard_normal(n)
    x = np.linalg.solve(J, b)
    errs = []
    for m in range(1, min(n, 6) + 1):
        res = fom_solve(K, spec, tb, b, bank, PinTLedger(), eps=0.0, maxit=m)
        e = res.x - x
        errs.append(np.sqrt(abs(np.vdot(e, J @ e))))
        if res.status == "breakdown":
            break
    assert all(b2 <= b1 * (1 + 1e-8) + 1e-12 for b1, b2 in zip(errs, errs[1:]))


@settings(max_examples=20)
@given(shift=st.floats(0.1, 5.0), scale=st.floats(0.05, 3.0), seed=st.integers(0, 2**16))
def test_shifted_krylov_invariance(shift, scale, seed):
    # the Krylov space of sigma I + c K equals that of K: same V, T mapped affinely
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((15, 15))
    K = sp.csr_matrix(A)
    b = rng.standard_normal(15)
    b1 = _basis(K, b, 5)
    b2 = _basis(sp.csr_matrix(shift * np.eye(15) + scale * A), b, 5)
    np.testing.assert_allclose(b2.V, b1.V, atol=1e-8)
    np.testing.assert_allclose(b2.T, shift * np.eye(5) + scale * b1.T, atol=1e-8 * (1 + np.abs(b1.T).max()))
    np.testing.assert_allclose(b2.t_next, scale * b1.t_next, rtol=1e-7)


def test_block_partial_deflation_small_space():
    # s = 3 on a 16-dimensional space: later blocks lose columns before the space closes
    from paradiag.analysis import dense_jl
    p = advdiff2d(4, 0.01)
    spec, tb, bank = _setup(p.K, 8, s=3)
    B = np.random.default_rng(9).standard_normal((16, 3))
    res = block_fom_solve(p.K, spec, tb, B, bank, PinTLedger(), eps=1e-12)
    basis = res.basis
    assert basis.dim <= 16
    assert np.linalg.norm(basis.V.conj().T @ basis.V - np.eye(basis.dim)) <= 1e-10
    J = dense_jl(p.K, spec, tb)
    ref = np.linalg.solve(J, B.T.reshape(-1)).reshape(3, 16).T
    np.testing.assert_allclose(res.x, ref, atol=1e-9 * np.linalg.norm(B))


def test_block_relation_with_shrinking_widths(rng):
    # K with a 2-dimensional invariant piece forces a width drop
    A = np.diag(np.arange(1.0, 13.0))
    B = np.zeros((12, 2))
    B[0, 0] = 1.0
    B[:, 1] = rng.standard_normal(12)
    basis = BlockArnoldiBasis(B)
    K = sp.csr_matrix(A)
    while not basis.breakdown:
        basis.extend(K)
    assert basis.widths[0] == 2 and min(basis.widths) == 1
    V = basis.V
    np.testing.assert_allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10)
    np.testing.assert_allclose(K @ V, V @ basis.T, atol=1e-10)
