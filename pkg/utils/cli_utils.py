"""
Command dispatch for ``python cli.py <command> --config PATH``.

Commands: analyze, simulate, harmonic, survival, theorem <id>,
verify-identities, calibrate. Each command writes its artifacts under the
output directory and returns an exit status: 0 success, 1 failed check or
runtime error, 2 configuration error. Errors are printed to stderr as one
JSON record.
"""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from utils.analysis_utils import agresti, conditioned, spectral, theorems
from utils.errors import BPMEError, ParseError, ValidationError
from utils.general_utils import configure_logging, make_rng, make_streams
from utils.input_data.config_utils import ExperimentConfig, config_hash, dump_config, load_config, with_overrides
from utils.input_data.report_utils import (
    harmonic_table_path,
    load_harmonic_table,
    save_harmonic_table,
    write_csv,
    write_json,
    write_trajectories,
)
from utils.model_utils.environment import dual_kernel, mixing_decay, stationary_distribution, validate_kernel
from utils.model_utils.offspring import explicit, geometric, poisson
from utils.model_utils.simulate import EnvironmentModel, build_environment, simulate

log = logging.getLogger(__name__)

COMMANDS = ("analyze", "simulate", "harmonic", "survival", "theorem", "verify-identities", "calibrate")
THEOREMS = ("1.1", "1.2", "1.3", "1.4", "P2.3", "W")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

IDENTITY_TOL = 1e-10
EXACT_TOL = 1e-12
RANDOM_ENVIRONMENTS = 200
K_CURVE_LAMBDAS = np.linspace(-2.0, 2.0, 41)


def _emit(record: dict, stream=None) -> None:
    print(json.dumps(record, sort_keys=True), file=stream or sys.stdout)


# -------------------------------------------------------------------------
## Commands


def _analyze(config: ExperimentConfig, out: Path, key: str, **_) -> int:
    env = config.environment
    report = spectral.analyze(env, config.t_grid)
    write_json({**report.to_dict(), "seed": config.seed}, out, "analyze", key)
    write_csv(report.to_frame(), out, "states", key)
    write_csv(spectral.k_curve(env, K_CURVE_LAMBDAS), out, "k_curve", key)
    write_csv(report.nonlattice.to_frame(), out, "nonlattice", key)
    deltas = mixing_decay(env.kernel, env.nu, 50)
    write_csv(pd.DataFrame({"n": np.arange(1, deltas.size + 1), "delta": deltas}), out, "mixing", key)
    _emit({"classification": report.classification, "k_prime0": report.k_prime0, "sigma2": report.sigma2,
           "nonlattice": report.nonlattice.nonlattice, "config_hash": key})
    return EXIT_OK


def _simulate(config: ExperimentConfig, out: Path, key: str, per_individual: bool = False, **_) -> int:
    env = config.environment
    horizon = max(config.n_list)
    trajectories = []
    for r in range(config.replicates["simulate"]):
        streams = make_streams(config.seed, "simulate", r)
        trajectories.append(
            simulate(env, config.initial_state, config.initial_population, horizon, streams, per_individual)
        )
    write_trajectories(trajectories, env.states, out, key)

    rows = []
    for n in config.n_list:
        z_n = np.array([t.z[n] for t in trajectories], dtype=float)
        rows.append({"n": n, "mean_z": z_n.mean(), "survival": float(np.mean(z_n > 0)),
                     "censored": sum(t.censored_at is not None and t.censored_at <= n for t in trajectories)})
    write_csv(pd.DataFrame(rows), out, "simulate", key)
    return EXIT_OK


def _harmonic_table(config: ExperimentConfig, out: Path, key: str, threads: int):
    """Cached table for this config, else a fresh estimate (saved)."""
    cached = load_harmonic_table(harmonic_table_path(out, key), key)
    if cached is not None:
        log.info("Reusing harmonic table for %s", key)
        return cached
    table = conditioned.estimate_V(
        config.environment, config.harmonic_y_grid, config.harmonic_horizon, config.replicates["harmonic"],
        config.seed, block_size=config.block_size, threads=threads,
    )
    save_harmonic_table(table, out, key)
    return table


def _harmonic(config: ExperimentConfig, out: Path, key: str, threads: int = 1, **_) -> int:
    env = config.environment
    table = _harmonic_table(config, out, key, threads)
    residuals = conditioned.harmonicity_residuals(env, table)
    write_csv(residuals, out, "harmonic_residuals", key)

    sigma = float(np.sqrt(spectral.sigma2(env)))
    grid_top = table.y_grid[-1] + 4.0 * sigma * np.sqrt(config.harmonic_horizon) + 2.0 * np.abs(env.rho_vec).max()
    fine = np.linspace(0.0, grid_top, 2001)
    grid_values = conditioned.iterate_V_grid(env, fine, config.harmonic_horizon)
    comparison = conditioned.compare_harmonic(table, grid_values, fine)
    write_csv(comparison, out, "harmonic_grid", key)

    start = env.state_index(config.initial_state)
    weight, weight_se = conditioned.plus_mean_weight(
        env, table, start, config.start_level, max(config.harmonic_horizon // 4, 1),
        config.replicates["plus"], config.seed, block_size=config.block_size, threads=threads,
    )
    top = table.y_grid[-1]
    summary = {
        "residuals_ok": bool(residuals["ok"].all()),
        "max_abs_residual": float(residuals["residual"].abs().max()),
        "grid_disagreements": int((~comparison["agree"]).sum()),
        "plus_mean_weight": weight,
        "plus_mean_weight_se": weight_se,
        "plus_weight_ok": bool(abs(weight - 1.0) <= 4.0 * weight_se),
        "slope_at_top": {label: float(table.values[st, -1] / top) if top > 0 else None
                         for st, label in enumerate(env.states)},
        "seed": config.seed,
    }
    write_json(summary, out, "harmonic", key)
    passed = summary["residuals_ok"] and summary["plus_weight_ok"]
    return EXIT_OK if passed else EXIT_FAILED


def _u_constant(config: ExperimentConfig, out: Path, key: str, threads: int):
    env = config.environment
    table = _harmonic_table(config, out, key, threads)
    result = conditioned.estimate_u(
        env, table, config.initial_state, config.initial_population, config.u_y_list,
        config.u_horizon, config.replicates["plus"], config.seed,
    )
    write_csv(result.diagnostics, out, "u_diagnostics", key)
    return result


def _write_report(report: theorems.ExperimentReport, out: Path, key: str) -> int:
    report.config_hash = key
    write_csv(report.table, out, "theorem", key, report.theorem)
    write_csv(report.criteria_frame(), out, "criteria", key, report.theorem)
    write_json(report.to_summary(), out, "theorem", key, report.theorem)
    _emit({"theorem": report.theorem, "passed": report.passed, "config_hash": key})
    return EXIT_OK if report.passed else EXIT_FAILED


def _survival(config: ExperimentConfig, out: Path, key: str, threads: int = 1, **_) -> int:
    u_result = _u_constant(config, out, key, threads)
    report = theorems.survival_curve(
        config.environment, config.initial_state, config.initial_population, config.target_state,
        config.n_list, config.replicates["survival"], config.seed,
        u_hat=(u_result.value, u_result.stderr), block_size=config.block_size, threads=threads,
    )
    return _write_report(report, out, key)


def _theorem(config: ExperimentConfig, out: Path, key: str, theorem: str = "1.1", threads: int = 1, **_) -> int:
    env = config.environment
    common = dict(block_size=config.block_size, threads=threads)
    i, z, j = config.initial_state, config.initial_population, config.target_state
    count = config.replicates["theorem"]

    if theorem == "1.1":
        report = theorems.survival_curve(env, i, z, j, config.n_list, config.replicates["survival"], config.seed, **common)
    elif theorem == "1.2":
        report = theorems.normalized_population_law(env, i, z, j, config.n_list, count, config.seed, **common)
    elif theorem == "1.3":
        report = theorems.conditional_clt(env, i, z, j, config.n_list, count, config.seed, **common)
    elif theorem == "1.4":
        report = theorems.yaglom_law(env, i, z, j, config.n_list, count, config.seed, **common)
    elif theorem == "P2.3":
        report = theorems.conditioned_clt_walk(
            env, i, config.start_level, j, config.n_list, config.replicates["walk"], config.seed, **common
        )
    elif theorem == "W":
        table = _harmonic_table(config, out, key, threads)
        report = theorems.martingale_limit_laplace(
            env, table, i, config.start_level, z, config.n_list, config.replicates["plus"], config.seed, **common
        )
    else:
        raise ValueError(f"Unknown theorem '{theorem}'. Expected one of {THEOREMS}")
    return _write_report(report, out, key)


def _random_environment(rng: np.random.Generator) -> EnvironmentModel:
    d = int(rng.integers(1, 5))
    kernel = validate_kernel(rng.dirichlet(np.ones(d), size=d))
    laws = []
    for _ in range(d):
        family = rng.integers(0, 3)
        if family == 0:
            laws.append(geometric(rng.uniform(0.2, 0.8)))
        elif family == 1:
            laws.append(poisson(rng.uniform(0.5, 3.0)))
        else:
            laws.append(explicit(rng.dirichlet(np.ones(4))))
    return build_environment(kernel, laws)


def identity_checks(config: ExperimentConfig) -> List[dict]:
    rows = []

    def add(suite, case, value, tol):
        rows.append({"suite": suite, "case": case, "value": float(value), "tolerance": tol,
                     "passed": bool(value <= tol)})

    rng = make_rng(config.seed, "identities")
    environments = [config.environment] + [_random_environment(rng) for _ in range(RANDOM_ENVIRONMENTS)]
    worst = 0.0
    for env in environments:
        path = rng.integers(0, env.d, size=int(rng.integers(1, 31)))
        for z in (1, 2, 5):
            for s in (0.0, 0.3, 0.9):
                direct = agresti.q_direct(env, path, z, s)
                decomposed = agresti.q_decomposed(env, path, z, s)
                worst = max(worst, abs(direct - decomposed) / decomposed)
    add("agresti", f"{len(environments)} environments", worst, IDENTITY_TOL)

    env = config.environment
    nu = stationary_distribution(env.kernel)
    dual = dual_kernel(env.kernel, nu)
    add("duality", "involution", np.abs(dual_kernel(dual, nu).rows - env.kernel.rows).max(), EXACT_TOL)
    add("duality", "dual invariance", np.abs(nu @ dual.rows - nu).sum(), EXACT_TOL)
    max_n = 4 if env.d <= 3 else 2
    for n in range(1, max_n + 1):
        add("duality", f"paths n={n}", conditioned.duality_check(env.kernel, nu, n), EXACT_TOL)

    add("spectral", "k(0) = 1", abs(spectral.k(env, 0.0) - 1.0), EXACT_TOL)
    h = spectral.DIFF_STEP
    numeric = (spectral.k(env, h, tol=4e-15) - spectral.k(env, -h, tol=4e-15)) / (2.0 * h)
    add("spectral", "k'(0) = nu(rho)", abs(numeric - float(nu @ np.asarray(env.rho_vec))), spectral.DIFF_TOL)

    levels = sorted({0.5, 1.0, 2.0, float(config.start_level)})
    k_steps = 3 if env.d <= 4 else 2
    add("harmonicity", f"one-step recursion k={k_steps}",
        conditioned.harmonic_identity_check(env, levels, k_steps), IDENTITY_TOL)
    return rows


def _verify_identities(config: ExperimentConfig, out: Path, key: str, **_) -> int:
    frame = pd.DataFrame(identity_checks(config))
    write_csv(frame, out, "identities", key)
    passed = bool(frame["passed"].all())
    write_json({"passed": passed, "failed": frame.loc[~frame["passed"], "case"].tolist(), "seed": config.seed},
               out, "identities", key)
    _emit({"identities": "passed" if passed else "failed", "config_hash": key})
    return EXIT_OK if passed else EXIT_FAILED


def _calibrate(config: ExperimentConfig, out: Path, key: str, state: Optional[str] = None, **_) -> int:
    env = config.environment
    target = state if state is not None else (config.target_state or config.initial_state)
    calibrated = with_overrides(config, environment=spectral.calibrate(env, target))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"calibrated_{key}.json"
    path.write_text(dump_config(calibrated), encoding="utf-8")
    _emit({"calibrated_config": str(path), "config_hash": config_hash(calibrated)})
    return EXIT_OK


_DISPATCH = {
    "analyze": _analyze,
    "simulate": _simulate,
    "harmonic": _harmonic,
    "survival": _survival,
    "theorem": _theorem,
    "verify-identities": _verify_identities,
    "calibrate": _calibrate,
}


def run(command: str, config: ExperimentConfig, out_dir=None, **options) -> int:
    """
    Execute one command on a validated config.

    Parameters
    ----------
    command : str
        One of ``COMMANDS``.
    config : ExperimentConfig
    out_dir : path, optional
        Output directory (defaults to ``config.output_dir``).
    **options
        ``threads``, ``theorem``, ``per_individual``, ``state``.

    Returns
    -------
    int
        Exit status (0 success, 1 failed check).
    """
    if command not in _DISPATCH:
        raise ValueError(f"Unknown command '{command}'. Expected one of {COMMANDS}")
    out = Path(out_dir or config.output_dir)
    key = config_hash(config)
    t0 = time.perf_counter()
    status = _DISPATCH[command](config, out, key, **options)
    log.info("✓ %s finished with status %d in %.1fs (config %s)", command, status, time.perf_counter() - t0, key)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cli.py",
        description="Branching processes in a Markovian environment: analysis, simulation and checks.",
    )
    parser.add_argument("command", choices=COMMANDS, help="Command to run.")
    parser.add_argument("theorem", nargs="?", choices=THEOREMS, help="Theorem id (only for 'theorem').")
    parser.add_argument("--config", required=True, help="Experiment config (JSON).")
    parser.add_argument("--seed", type=int, default=None, help="Master seed, overrides the config.")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="Worker threads for batch simulation.")
    parser.add_argument("--out", default=None, help="Output directory, overrides the config.")
    parser.add_argument("--per-individual", action="store_true", dest="per_individual",
                        help="simulate: draw every individual instead of generation totals.")
    parser.add_argument("--state", default=None, help="calibrate: state whose offspring mean is rescaled.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress at INFO.")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging("INFO" if args.verbose else None)

    if args.command == "theorem" and args.theorem is None:
        _emit({"error": "UsageError", "message": f"'theorem' needs an id, one of {list(THEOREMS)}"}, sys.stderr)
        return EXIT_CONFIG

    try:
        config = with_overrides(load_config(args.config), seed=args.seed, output_dir=args.out)
    except (ParseError, ValidationError) as err:
        _emit(err.to_record(), sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        _emit({"error": type(err).__name__, "message": str(err)}, sys.stderr)
        return EXIT_CONFIG

    try:
        return run(
            args.command, config, threads=max(int(args.threads), 1), theorem=args.theorem,
            per_individual=args.per_individual, state=args.state,
        )
    except BPMEError as err:
        _emit(err.to_record(), sys.stderr)
        return EXIT_FAILED
    except (ValueError, RuntimeError, ArithmeticError) as err:
        _emit({"error": type(err).__name__, "message": str(err)}, sys.stderr)
        return EXIT_FAILED
