"""Batch experiment runner.

    paradiag run --config cfg.json [--experiment NAME] [--out DIR] [--workers N] [--key value ...]

Every config key may be given on the command line as ``--key value``; flags
win over the file.  Lists are written as JSON (``[32,64]``) or comma separated
(``32,64``).  Exit codes: 0 success, 2 invalid configuration or unwritable
output, 3 solver non-convergence or a failed oracle check.
"""

import argparse
import csv
import gc
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import analysis
from .baselines import gmres_allatonce
from .driver import (expected_pint_loops, solve_be, solve_be_alpha, solve_bdf,
                     warmup_history)
from .errors import ConvergenceError, ParadiagError
from .spatial import advdiff2d, heat2d, heat_lambda_max, heat_lambda_min, reversed_wind, wind
from .time_structure import spectrum

log = logging.getLogger(__name__)

EXPERIMENTS = ("table1", "heat", "alpha-sweep", "compare", "oracle-check")
COMPARE_METHODS = ("alg3", "alg3-xb", "alg3-u1", "gmres")

# key -> (element type, list allowed)
KEYS = {
    "experiment": (str, False),
    "problem": (str, False),
    "n": (int, True),
    "nu": (float, True),
    "ell": (int, True),
    "T": (float, False),
    "s": (int, True),
    "alpha": (float, True),
    "alpha_u1": (float, False),
    "eps": (float, False),
    "q": (int, False),
    "maxit": (int, False),
    "skip_correction": (bool, False),
    "ref_eps": (float, False),
    "seed": (int, False),
    "out": (str, False),
    "workers": (int, False),
    "wind": (str, False),
    "methods": (str, True),
    "wall_clock": (bool, False),
}

BASE_DEFAULTS = {
    "problem": "advdiff2d", "n": 128, "nu": 0.1, "ell": 32, "T": 1.0, "s": 1,
    "alpha": 1e-4, "alpha_u1": 1e-6, "eps": 1e-8, "q": 1, "maxit": 100,
    "skip_correction": False, "ref_eps": 1e-13, "seed": 0, "out": "results",
    "workers": None, "wind": "standard", "methods": list(COMPARE_METHODS),
    "wall_clock": False,
}

EXPERIMENT_DEFAULTS = {
    "table1": {"problem": "heat2d", "n": 256, "ell": [256, 512, 1024]},
    "heat": {"problem": "heat2d", "n": 128, "ell": 32, "alpha": 1.0},
    "alpha-sweep": {"n": 128, "ell": 64, "nu": 2.0 ** -5, "maxit": 1,
                    "alpha": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]},
    "compare": {"n": 128, "ell": 32, "nu": [1e-1, 1e-2, 1e-3]},
    "oracle-check": {"problem": "heat2d", "n": 16, "ell": 8, "s": [1, 2, 3]},
}

SCHEMAS = {
    "table1": ["run_id", "n", "n_bar", "ell", "tau", "lambda_min", "bound"],
    "heat": ["run_id", "n", "n_bar", "ell", "pint_loops", "inner_iters", "inner_rel_residual",
             "rel_residual", "err_vs_oracle", "jl_min", "jl_max", "bound"],
    "alpha-sweep": ["run_id", "n_bar", "ell", "nu", "alpha", "u1_norm", "u2_norm", "res_full",
                    "res_u1", "err_vs_oracle", "kappa_FD", "pint_loops", "inner_iters"],
    "compare": ["run_id", "method", "n_bar", "ell", "nu", "alpha", "pint_loops",
                "rel_residual", "inner_iters", "wall_note"],
    "oracle-check": ["run_id", "problem", "s", "n_bar", "ell", "pint_loops",
                     "dev_sequential", "dev_dense", "rel_residual"],
}

ORACLE_TOL = 1e-8


class ConfigError(ParadiagError, ValueError):
    """Invalid experiment configuration."""


class CheckFailed(ParadiagError, RuntimeError):
    """An experiment ran but its built-in acceptance check did not hold."""


@dataclass
class ExperimentConfig:
    experiment: str
    values: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def as_list(self, key) -> list:
        v = self.values[key]
        return list(v) if isinstance(v, (list, tuple)) else [v]


def _coerce(key: str, value):
    typ, list_ok = KEYS[key]
    if isinstance(value, (list, tuple)):
        if not list_ok:
            raise ConfigError(f"key {key!r} takes a single value, got a list")
        return [_coerce_scalar(key, typ, v) for v in value]
    return _coerce_scalar(key, typ, value)


def _coerce_scalar(key, typ, value):
    if value is None and key == "workers":
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"key {key!r} expects a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        try:
            f = float(value)
        except ValueError:
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}") from None
        if not f.is_integer():
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        return int(f)
    if typ is float:
        if isinstance(value, bool):
            raise ConfigError(f"key {key!r} expects a number, got {value!r}")
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"key {key!r} expects a number, got {value!r}") from None
        if not math.isfinite(f):
            raise ConfigError(f"key {key!r} must be finite, got {value!r}")
        return f
    if not isinstance(value, str):
        raise ConfigError(f"key {key!r} expects a string, got {value!r}")
    return value


def parse_override(text: str):
    """Parse a ``--key value`` flag value: JSON first, then comma lists, then raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_override(part) for part in text.split(",")]
    return text


def build_config(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> ExperimentConfig:
    raw = dict(file_values)
    raw.update(overrides)
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    values = dict(BASE_DEFAULTS)
    values.update(EXPERIMENT_DEFAULTS[exp])
    values.update({k: _coerce(k, v) for k, v in raw.items()})
    _validate(exp, values)
    return ExperimentConfig(exp, values)


def _validate(exp, v):
    def all_of(key, pred, what):
        vals = v[key] if isinstance(v[key], list) else [v[key]]
        if not vals or not all(pred(x) for x in vals):
            raise ConfigError(f"{key} must be {what}, got {v[key]!r}")

    if v["problem"] not in ("heat2d", "advdiff2d"):
        raise ConfigError(f"problem must be heat2d or advdiff2d, got {v['problem']!r}")
    if v["wind"] not in ("standard", "reversed"):
        raise ConfigError(f"wind must be 'standard' or 'reversed', got {v['wind']!r}")
    all_of("n", lambda x: x >= 2, "an integer >= 2")
    all_of("ell", lambda x: x >= 1, "a positive integer")
    all_of("nu", lambda x: x > 0, "positive")
    all_of("alpha", lambda x: 0 < x <= 1, "in (0, 1]")
    all_of("s", lambda x: 1 <= x <= 6, "in 1..6")
    all_of("methods", lambda x: x in COMPARE_METHODS, f"a subset of {COMPARE_METHODS}")
    for key in ("T", "eps", "ref_eps"):
        if not v[key] > 0:
            raise ConfigError(f"{key} must be positive, got {v[key]!r}")
    if not 0 < v["alpha_u1"] <= 1:
        raise ConfigError(f"alpha_u1 must be in (0, 1], got {v['alpha_u1']!r}")
    if v["q"] < 1 or v["maxit"] < 1:
        raise ConfigError("q and maxit must be positive integers")
    if v["workers"] is not None and v["workers"] < 1:
        raise ConfigError(f"workers must be a positive integer, got {v['workers']!r}")
    if exp == "alpha-sweep" and (isinstance(v["n"], list) or isinstance(v["ell"], list)
                                 or isinstance(v["nu"], list)):
        raise ConfigError("alpha-sweep takes a single n, ell and nu")


# ---------------------------------------------------------------- output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10e")
    return str(value)


def _atomic_write(path: str, write):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            write(fh)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv(rows: Sequence[Dict[str, Any]], schema: Sequence[str], path: str) -> str:
    """Write ``rows`` as RFC-4180 CSV with header ``schema`` via write-then-rename."""
    for i, row in enumerate(rows):
        if set(row) != set(schema):
            raise ValueError(f"row {i} keys {sorted(row)} do not match schema {list(schema)}")

    def write(fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(schema)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in schema])

    _atomic_write(path, write)
    return path


def _write_text(path: str, text: str):
    _atomic_write(path, lambda fh: fh.write(text))


# ---------------------------------------------------------------- experiments


def _make_problem(cfg: ExperimentConfig, n: int, nu: Optional[float] = None):
    if cfg["problem"] == "heat2d":
        return heat2d(n)
    wf = reversed_wind if cfg["wind"] == "reversed" else wind
    return advdiff2d(n, cfg["nu"] if nu is None else nu, wind_field=wf)


def _loop_law(rows, expected_key="expected_loops"):
    bad = [r["run_id"] for r in rows if r["pint_loops"] != r[expected_key]]
    return "loop law: ok" if not bad else f"loop law: MISMATCH in {', '.join(bad)}"


def run_table1(cfg):
    rows, lines = [], []
    for n in cfg.as_list("n"):
        lam = heat_lambda_min(n)
        for ell in cfg.as_list("ell"):
            tau = cfg["T"] / ell
            rows.append({"run_id": f"table1-{len(rows):03d}", "n": n, "n_bar": n * n,
                         "ell": ell, "tau": tau, "lambda_min": lam,
                         "bound": analysis.condition_bound(tau, lam)})
            lines.append(f"n_bar={n * n} ell={ell}: bound {rows[-1]['bound']:.3f}")
    return rows, lines


def run_heat(cfg):
    rows, lines, checks = [], [], []
    for n in cfg.as_list("n"):
        problem = heat2d(n)
        for ell in cfg.as_list("ell"):
            tau = cfg["T"] / ell
            rep = solve_be(problem, ell, tau, eps=cfg["eps"], q=cfg["q"], maxit=cfg["maxit"],
                           workers=cfg["workers"])
            ref = analysis.sequential_oracle(problem, 1, tau, ell, [problem.u0])
            spec = spectrum(1, ell)
            lo, hi = analysis.jl_extremes(spec, tau, heat_lambda_min(n), heat_lambda_max(n))
            rid = f"heat-{len(rows):03d}"
            rows.append({"run_id": rid, "n": n, "n_bar": n * n, "ell": ell,
                         "pint_loops": rep.pint_loops, "inner_iters": rep.inner_iterations,
                         "inner_rel_residual": rep.inner_rel_residual,
                         "rel_residual": rep.rel_residual,
                         "err_vs_oracle": float(np.linalg.norm(rep.U - ref) / np.linalg.norm(ref)),
                         "jl_min": lo, "jl_max": hi,
                         "bound": analysis.condition_bound(tau, heat_lambda_min(n))})
            checks.append({"run_id": rid, "pint_loops": rep.pint_loops,
                           "expected_loops": expected_pint_loops(rep)})
            lines.append(f"n_bar={n * n} ell={ell}: m={rep.inner_iterations} "
                         f"loops={rep.pint_loops} inner residual {rep.inner_rel_residual:.2e}")
            del rep
            gc.collect()
    lines.append(_loop_law(checks))
    return rows, lines


def run_alpha_sweep(cfg):
    n, ell, nu = cfg["n"], cfg["ell"], cfg["nu"]
    problem = _make_problem(cfg, n, nu)
    tau = cfg["T"] / ell
    ref = gmres_allatonce(problem, tau, ell, eps=cfg["ref_eps"], maxit=200, workers=cfg["workers"])
    if not ref.converged:
        raise ConvergenceError(f"reference GMRES stopped at residual {ref.rel_residual:.3e}", ref)
    U_hat = ref.U
    del ref
    gc.collect()
    rows, lines, checks = [], [], []
    for alpha in cfg.as_list("alpha"):
        rep = solve_be_alpha(problem, ell, tau, alpha=alpha, eps=cfg["eps"], q=cfg["q"],
                             maxit=cfg["maxit"], skip_correction=cfg["skip_correction"],
                             early_exit=False, strict=False, workers=cfg["workers"])
        rid = f"alpha-sweep-{len(rows):03d}"
        rows.append({"run_id": rid, "n_bar": problem.n_bar, "ell": ell, "nu": nu, "alpha": alpha,
                     "u1_norm": rep.u1_norm, "u2_norm": rep.u2_norm,
                     "res_full": rep.rel_residual, "res_u1": rep.res_u1,
                     "err_vs_oracle": float(np.linalg.norm(U_hat - rep.U) / np.linalg.norm(U_hat)),
                     "kappa_FD": analysis.dft_scaling_condition(alpha, ell),
                     "pint_loops": rep.pint_loops, "inner_iters": rep.inner_iterations})
        checks.append({"run_id": rid, "pint_loops": rep.pint_loops,
                       "expected_loops": expected_pint_loops(rep)})
        lines.append(f"alpha={alpha:.0e}: res(U)={rep.rel_residual:.2e} res(U1)={rep.res_u1:.2e} "
                     f"err={rows[-1]['err_vs_oracle']:.2e}")
        del rep
        gc.collect()
    lines.append(_loop_law(checks))
    return rows, lines


def run_compare(cfg):
    rows, lines, checks = [], [], []
    methods = cfg.as_list("methods")
    for n in cfg.as_list("n"):
        for ell in cfg.as_list("ell"):
            for nu in cfg.as_list("nu"):
                problem = _make_problem(cfg, n, nu)
                tau = cfg["T"] / ell
                for method in methods:
                    t = time.perf_counter()
                    rid = f"compare-{len(rows):03d}"
                    if method == "gmres":
                        rep = gmres_allatonce(problem, tau, ell, eps=cfg["eps"], maxit=200,
                                              workers=cfg["workers"])
                        if not rep.converged:
                            raise ConvergenceError(
                                f"GMRES did not converge (n={n}, ell={ell}, nu={nu})", rep)
                        alpha, loops, res, iters = 1.0, rep.pint_loops, rep.rel_residual, rep.iterations
                        expected = rep.iterations + 1
                    else:
                        alpha = cfg["alpha_u1"] if method == "alg3-u1" else cfg.as_list("alpha")[0]
                        kw = dict(alpha=alpha, eps=cfg["eps"], q=cfg["q"], maxit=cfg["maxit"],
                                  workers=cfg["workers"])
                        if method == "alg3-xb":
                            kw.update(skip_correction=True, early_exit=False)
                        elif method == "alg3-u1":
                            kw.update(eps=1.0)  # loose tolerance: stop after U_1
                        rep = solve_be_alpha(problem, ell, tau, **kw)
                        loops, res, iters = rep.pint_loops, rep.rel_residual, rep.inner_iterations
                        expected = expected_pint_loops(rep)
                    wall = f"{time.perf_counter() - t:.2f}s" if cfg["wall_clock"] else ""
                    rows.append({"run_id": rid, "method": method, "n_bar": problem.n_bar,
                                 "ell": ell, "nu": nu, "alpha": alpha, "pint_loops": loops,
                                 "rel_residual": res, "inner_iters": iters, "wall_note": wall})
                    checks.append({"run_id": rid, "pint_loops": loops, "expected_loops": expected})
                    lines.append(f"n_bar={problem.n_bar} ell={ell} nu={nu:g} {method}: "
                                 f"loops={loops} residual {res:.2e}")
                    del rep
                    gc.collect()
    lines.append(_loop_law(checks))
    return rows, lines


def run_oracle_check(cfg):
    rows, lines = [], []
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    for n in cfg.as_list("n"):
        problem = _make_problem(cfg, n)
        for ell in cfg.as_list("ell"):
            tau = cfg["T"] / ell
            for s in cfg.as_list("s"):
                if s == 1:
                    history = [problem.u0]
                    rep = solve_be(problem, ell, tau, eps=cfg["eps"], workers=cfg["workers"])
                else:
                    history = warmup_history(problem, s, tau)
                    history = [h + 0.1 * rng.standard_normal(h.shape) for h in history]
                    rep = solve_bdf(problem, ell, tau, s=s, eps=cfg["eps"], history=history,
                                    t0=0.0, workers=cfg["workers"])
                seq = analysis.sequential_oracle(problem, s, tau, ell, history)
                dev_seq = float(np.linalg.norm(rep.U - seq) / np.linalg.norm(seq))
                if problem.n_bar * ell <= analysis.DENSE_ALLATONCE_MAX:
                    dense = analysis.dense_allatonce(problem, s, tau, ell, history)
                    dev_dense = float(np.linalg.norm(rep.U - dense) / np.linalg.norm(dense))
                else:
                    dev_dense = float("nan")
                worst = max(worst, dev_seq, 0.0 if math.isnan(dev_dense) else dev_dense)
                rows.append({"run_id": f"oracle-check-{len(rows):03d}", "problem": problem.label,
                             "s": s, "n_bar": problem.n_bar, "ell": ell,
                             "pint_loops": rep.pint_loops, "dev_sequential": dev_seq,
                             "dev_dense": dev_dense, "rel_residual": rep.rel_residual})
                lines.append(f"s={s} n_bar={problem.n_bar} ell={ell}: deviation {dev_seq:.2e} "
                             f"(sequential) {dev_dense:.2e} (dense)")
    lines.append(f"max deviation {worst:.2e} (limit {ORACLE_TOL:.0e})")
    if worst > ORACLE_TOL:
        return rows, lines, CheckFailed(f"oracle deviation {worst:.3e} exceeds {ORACLE_TOL:.0e}")
    return rows, lines


RUNNERS = {
    "table1": run_table1,
    "heat": run_heat,
    "alpha-sweep": run_alpha_sweep,
    "compare": run_compare,
    "oracle-check": run_oracle_check,
}


def run(cfg: ExperimentConfig) -> int:
    """Run one experiment, write ``<out>/<experiment>.csv`` and a summary; return the exit code."""
    out = cfg["out"]
    result = RUNNERS[cfg.experiment](cfg)
    failure = result[2] if len(result) == 3 else None
    rows, lines = result[0], result[1]
    csv_path = os.path.join(out, f"{cfg.experiment}.csv")
    emit_csv(rows, SCHEMAS[cfg.experiment], csv_path)
    summary = "\n".join([f"experiment {cfg.experiment}: {len(rows)} rows -> {csv_path}"] + lines) + "\n"
    _write_text(os.path.join(out, f"{cfg.experiment}_summary.txt"), summary)
    sys.stdout.write(summary)
    if failure is not None:
        sys.stderr.write(f"paradiag: {failure}\n")
        return 3
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="paradiag", description="ParaDiag experiment runner")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True, help="JSON file with a flat key set")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--out", help="output directory")
    r.add_argument("--workers", type=int, help="threads for the shifted solves")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(extra: List[str]) -> Dict[str, Any]:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"flag {tok!r} needs a value")
            val = extra[i + 1]
            i += 2
        out[key] = parse_override(val)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        overrides = _overrides(extra)
        for key in ("experiment", "out", "workers"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        cfg = build_config(file_values, overrides)
    except ParadiagError as exc:
        sys.stderr.write(f"paradiag: {exc}\n")
        return 2
    try:
        return run(cfg)
    except ConvergenceError as exc:
        sys.stderr.write(f"paradiag: {exc}\n")
        return 3
    except ParadiagError as exc:
        sys.stderr.write(f"paradiag: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"paradiag: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
