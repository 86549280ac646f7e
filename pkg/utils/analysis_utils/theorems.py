"""
Monte Carlo checks of the limit theorems.

Every check conditions by rejection on a plain batch simulation (keep the
survivors) and returns an ``ExperimentReport``: one table row per
(n, j, t, metric) cell and a list of pass/fail criteria, each one a
recorded numeric comparison.

All population checks draw from the same ``"branching"`` streams, so on a
shared seed the survivor sets (and hence the sqrt(n) P(Z_n > 0) values)
coincide across reports.
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from utils.analysis_utils.conditioned import HarmonicTable, plus_weights
from utils.analysis_utils.spectral import sigma2
from utils.errors import TooFewSurvivors
from utils.general_utils import make_rng
from utils.model_utils.simulate import DEFAULT_BLOCK_SIZE, EnvironmentModel, Snapshot, simulate_batch

log = logging.getLogger(__name__)

MIN_SURVIVORS = 1000
KS_THRESHOLD = 0.05
BOOTSTRAP_RESAMPLES = 200
SE_FACTOR = 4.0
RELATIVE_TOL = 0.05
RAYLEIGH_MEDIAN = float(np.sqrt(2.0 * np.log(2.0)))
LAPLACE_ARGS = (0.5, 1.0, 2.0)
ATOM_LEVELS = (1e-3, 1e-2, 1e-1)
CDF_POINTS = tuple(np.round(np.arange(0.25, 3.01, 0.25), 2))
COUPLING_EPS = 0.25
MARGINAL = "*"

NList = Union[int, Sequence[int]]


# -------------------------------------------------------------------------
## Report


@dataclass(frozen=True)
class Criterion:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    """Per-theorem summary: table, criteria and what produced them."""

    theorem: str
    n_list: List[int]
    table: pd.DataFrame
    criteria: List[Criterion]
    seeds: Dict[str, object]
    runtime: float = 0.0
    config_hash: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def criteria_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.__dict__ for c in self.criteria], columns=["name", "value", "threshold", "passed", "detail"])

    def to_summary(self) -> dict:
        """JSON-ready summary; runtime is left out so reruns are identical."""
        return {
            "theorem": self.theorem,
            "n_list": [int(n) for n in self.n_list],
            "passed": self.passed,
            "criteria": [
                {"name": c.name, "value": float(c.value), "threshold": float(c.threshold),
                 "passed": bool(c.passed), "detail": c.detail}
                for c in self.criteria
            ],
            "seeds": self.seeds,
            "config_hash": self.config_hash,
        }


class _Rows:
    """Accumulates report cells."""

    def __init__(self):
        self.rows = []

    def add(self, n, j, metric, estimate, se=np.nan, reference=np.nan, t=np.nan):
        self.rows.append({"n": int(n), "j": j, "t": t, "metric": metric, "estimate": float(estimate),
                          "se": float(se), "reference": float(reference)})

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["n", "j", "t", "metric", "estimate", "se", "reference"])


def rayleigh_cdf(t) -> Union[float, np.ndarray]:
    """
    (1 - e^{-t^2/2}) 1{t >= 0}.

    Examples
    --------
    >>> round(rayleigh_cdf(1.1774100225154747), 12)
    0.5
    """
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0.0, -np.expm1(-0.5 * np.square(np.maximum(t, 0.0))), 0.0)
    return float(out) if out.ndim == 0 else out


# -------------------------------------------------------------------------
## Helpers


def _as_list(n: NList) -> List[int]:
    values = sorted({int(n)} if np.isscalar(n) else {int(v) for v in n})
    if not values or values[0] < 1:
        raise ValueError(f"Horizons must be positive, got {values}")
    return values


def _binomial(count: int, total: int):
    p = count / total if total else 0.0
    return p, float(np.sqrt(p * (1.0 - p) / total)) if total else 0.0


def _combined(*errors: float) -> float:
    return float(np.sqrt(np.sum(np.square(errors))))


def _labels(env: EnvironmentModel, j) -> List:
    """Cells to report: the marginal plus every state (or just the target)."""
    if j is None:
        return [MARGINAL, *env.states]
    return [env.states[env.state_index(j)]]


def _select(env: EnvironmentModel, snap: Snapshot, label) -> np.ndarray:
    if label == MARGINAL:
        return np.ones(snap.count, dtype=bool)
    return snap.x == env.state_index(label)


def _target(env: EnvironmentModel, j) -> str:
    return MARGINAL if j is None else env.states[env.state_index(j)]


def _require(count: int, minimum: int, what: str, n: int) -> None:
    if count < minimum:
        raise TooFewSurvivors(f"Only {count} {what} at n={n} (need {minimum})", survivors=count, n=n)


def _ks_with_bootstrap(sample: np.ndarray, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES):
    """KS distance to the Rayleigh law and its bootstrap standard error."""
    distance = float(stats.kstest(sample, stats.rayleigh.cdf).statistic)
    boot = np.empty(resamples)
    for b in range(resamples):
        boot[b] = stats.kstest(rng.choice(sample, sample.size, replace=True), stats.rayleigh.cdf).statistic
    return distance, float(boot.std(ddof=1))


def _bootstrap_mean(values: np.ndarray, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    return float(values[idx].mean(axis=1).std(ddof=1))


def _factorization(groups: Dict[str, np.ndarray], rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES):
    """
    Worst two-sample KS distance between per-state samples and the matching
    bootstrap threshold (mean + 4 sd of pooled resamples).
    """
    labels = [k for k, v in groups.items() if v.size >= 2]
    worst_d, worst_limit = 0.0, np.inf
    for a_pos, a in enumerate(labels):
        for b in labels[a_pos + 1:]:
            x, y = groups[a], groups[b]
            d = float(stats.ks_2samp(x, y).statistic)
            pooled = np.concatenate([x, y])
            null = np.empty(resamples)
            for r in range(resamples):
                perm = rng.choice(pooled, pooled.size, replace=True)
                null[r] = stats.ks_2samp(perm[: x.size], perm[x.size:]).statistic
            limit = float(null.mean() + SE_FACTOR * null.std(ddof=1))
            if d - limit > worst_d - worst_limit:
                worst_d, worst_limit = d, limit
    return worst_d, worst_limit


def _branching(env, i, z, n_list, replicates, seed, block_size, threads, keep_extinct=False, kill_level=None):
    return simulate_batch(
        env, i, z, n_list, replicates, seed, module="branching", branching=True,
        keep_extinct=keep_extinct, kill_level=kill_level, block_size=block_size, threads=threads,
    )


def _sigma(env: EnvironmentModel, sigma: Optional[float]) -> float:
    return float(np.sqrt(sigma2(env))) if sigma is None else float(sigma)


def _marginal_criteria(env, rows: _Rows, criteria: List[Criterion], snap: Snapshot, n: int, what: str) -> None:
    """P(X_n = j | conditioning event) against nu(j), every state."""
    for st, label in enumerate(env.states):
        p, se = _binomial(int(np.sum(snap.x == st)), snap.count)
        rows.add(n, label, "marginal_j", p, se, env.nu[st])
        criteria.append(Criterion(
            f"marginal_{label}", abs(p - env.nu[st]), SE_FACTOR * se,
            bool(abs(p - env.nu[st]) <= SE_FACTOR * se), f"P(X_n={label} | {what}) vs nu",
        ))


def _rayleigh_cells(rows: _Rows, n: int, label: str, sample: np.ndarray, metric: str) -> None:
    for t in CDF_POINTS:
        p, se = _binomial(int(np.sum(sample <= t)), sample.size)
        rows.add(n, label, metric, p, se, rayleigh_cdf(t), t=t)


def _finish(theorem, n_list, rows, criteria, seed, modules, t0) -> ExperimentReport:
    runtime = time.perf_counter() - t0
    report = ExperimentReport(
        theorem=theorem, n_list=list(n_list), table=rows.frame(), criteria=criteria,
        seeds={"seed": int(seed), "modules": list(modules)}, runtime=runtime,
    )
    log.info("✓ %s: %s in %.1fs", theorem, "passed" if report.passed else "FAILED", runtime)
    return report


# -------------------------------------------------------------------------
## Survival asymptotics


def survival_curve(
    env: EnvironmentModel,
    i,
    z: int,
    j,
    n_list: NList,
    replicates: int,
    seed: int,
    u_hat: Optional[Sequence[float]] = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> ExperimentReport:
    """
    sqrt(n) P(Z_n > 0, X_n = j) across horizons.

    Parameters
    ----------
    j : state label, index or None
        Target state; None reports the marginal as the target and every
        state alongside.
    u_hat : (value, stderr), optional
        Survival constant from the conditioned module; when given, the last
        horizon is compared against nu(j) u.

    Criteria: flatness between the last two horizons within 4 combined SE;
    agreement with nu(j) u within max(5%, 4 SE); and the j-split
    P(X_n = j | Z_n > 0) against nu(j).
    """
    t0 = time.perf_counter()
    n_list = _as_list(n_list)
    rows, criteria = _Rows(), []
    target = _target(env, j)
    curve = {}

    snaps = _branching(env, i, z, n_list, replicates, seed, block_size, threads)
    for n in n_list:
        snap = snaps[n]
        for label in _labels(env, j):
            p, se = _binomial(int(_select(env, snap, label).sum()), replicates)
            scaled, scaled_se = np.sqrt(n) * p, np.sqrt(n) * se
            rows.add(n, label, "sqrt_n_survival", scaled, scaled_se)
            rows.add(n, label, "survival", p, se)
            if label == target:
                curve[n] = (scaled, scaled_se)

    if len(n_list) >= 2:
        (a, a_se), (b, b_se) = curve[n_list[-2]], curve[n_list[-1]]
        limit = SE_FACTOR * _combined(a_se, b_se)
        criteria.append(Criterion("flatness", abs(b - a), limit, bool(abs(b - a) <= limit),
                                  f"n={n_list[-2]} vs n={n_list[-1]}"))

    if u_hat is not None:
        u, u_se = u_hat
        weight = 1.0 if target == MARGINAL else float(env.nu[env.state_index(target)])
        reference = weight * u
        value, value_se = curve[n_list[-1]]
        limit = max(RELATIVE_TOL * reference, SE_FACTOR * _combined(value_se, weight * u_se))
        rows.add(n_list[-1], target, "reference_u", reference, weight * u_se)
        criteria.append(Criterion("matches_u", abs(value - reference), limit,
                                  bool(abs(value - reference) <= limit), "sqrt(n) P vs nu(j) u"))

    last = snaps[n_list[-1]]
    if last.count > 0 and env.d > 1:
        _marginal_criteria(env, rows, criteria, last, n_list[-1], "Z_n > 0")

    return _finish("1.1", n_list, rows, criteria, seed, ["branching"], t0)


def normalized_population_law(
    env: EnvironmentModel,
    i,
    z: int,
    j,
    n_list: NList,
    replicates: int,
    seed: int,
    laplace_args: Sequence[float] = LAPLACE_ARGS,
    min_survivors: int = MIN_SURVIVORS,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> ExperimentReport:
    """
    Conditional law of W_n = Z_n e^{-S_n} given Z_n > 0 (and X_n = j).

    Reports the empirical Laplace transform at ``laplace_args`` with
    bootstrap SE, its stability between the first and last horizon, the
    factorization over X_n (two-sample KS against a pooled bootstrap null)
    and the small-value mass P(W_n <= eps | Z_n > 0).

    Raises
    ------
    TooFewSurvivors
        If some horizon has fewer than ``min_survivors`` survivors.
    """
    t0 = time.perf_counter()
    n_list = _as_list(n_list)
    rows, criteria = _Rows(), []
    target = _target(env, j)
    rng = make_rng(seed, "bootstrap", 2)
    laplace, atoms = {}, {}

    snaps = _branching(env, i, z, n_list, replicates, seed, block_size, threads)
    for n in n_list:
        snap = snaps[n]
        _require(snap.count, min_survivors, "survivors", n)
        rows.add(n, MARGINAL, "sqrt_n_survival", np.sqrt(n) * snap.count / replicates)
        rows.add(n, MARGINAL, "censored", float(np.sum(snap.censored)))
        w = np.exp(np.log(snap.z.astype(float)) - snap.s)
        sample = w[_select(env, snap, target)]
        _require(sample.size, min_survivors, "survivors in the target state", n)
        rows.add(n, target, "total_mass", 1.0, reference=1.0)

        for a in laplace_args:
            values = np.exp(-a * sample)
            est, se = float(values.mean()), _bootstrap_mean(values, rng)
            rows.add(n, target, "laplace", est, se, t=a)
            laplace[(n, a)] = (est, se)

        for eps in ATOM_LEVELS:
            p, se = _binomial(int(np.sum(sample <= eps)), sample.size)
            rows.add(n, target, "small_mass", p, se, t=eps)
            atoms[(n, eps)] = (p, se)

    first, last = n_list[0], n_list[-1]
    if first != last:
        for a in laplace_args:
            (x, x_se), (y, y_se) = laplace[(first, a)], laplace[(last, a)]
            limit = SE_FACTOR * _combined(x_se, y_se)
            criteria.append(Criterion(f"laplace_stable_{a:g}", abs(y - x), limit, bool(abs(y - x) <= limit),
                                      f"n={first} vs n={last}"))
        for eps in ATOM_LEVELS:
            (x, x_se), (y, y_se) = atoms[(first, eps)], atoms[(last, eps)]
            limit = SE_FACTOR * _combined(x_se, y_se)
            criteria.append(Criterion(f"small_mass_nonincreasing_{eps:g}", y - x, limit, bool(y - x <= limit),
                                      f"n={first} vs n={last}"))

    p_atom = atoms[(last, ATOM_LEVELS[0])][0]
    criteria.append(Criterion("no_atom_at_zero", p_atom, 0.01, bool(p_atom < 0.01),
                              f"P(W_n <= {ATOM_LEVELS[0]:g} | Z_n > 0) at n={last}"))

    snap = snaps[last]
    if env.d > 1:
        w = np.exp(np.log(snap.z.astype(float)) - snap.s)
        groups = {label: w[snap.x == st] for st, label in enumerate(env.states)}
        d_max, limit = _factorization(groups, rng)
        if np.isfinite(limit):
            rows.add(last, MARGINAL, "factorization_ks", d_max, reference=limit)
            criteria.append(Criterion("factorization", d_max, limit, bool(d_max <= limit),
                                      "two-sample KS of W_n across X_n"))

    return _finish("1.2", n_list, rows, criteria, seed, ["branching", "bootstrap"], t0)


def _rayleigh_check(rows, criteria, rng, n, label, sample, metric) -> None:
    """KS distance, median and negative mass of a normalized sample."""
    _rayleigh_cells(rows, n, label, sample, metric)
    distance, distance_se = _ks_with_bootstrap(sample, rng)
    rows.add(n, label, "ks_distance", distance, distance_se, KS_THRESHOLD)
    criteria.append(Criterion("ks_rayleigh", distance, KS_THRESHOLD, bool(distance <= KS_THRESHOLD),
                              f"n={n}, {sample.size} samples"))

    median = float(np.median(sample))
    rows.add(n, label, "median", median, reference=RAYLEIGH_MEDIAN)
    gap = abs(median / RAYLEIGH_MEDIAN - 1.0)
    criteria.append(Criterion("rayleigh_median", gap, RELATIVE_TOL, bool(gap <= RELATIVE_TOL),
                              "relative gap to sqrt(2 ln 2)"))


def conditional_clt(
    env: EnvironmentModel,
    i,
    z: int,
    j,
    n_list: NList,
    replicates: int,
    seed: int,
    sigma: Optional[float] = None,
    min_survivors: int = MIN_SURVIVORS,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> ExperimentReport:
    """
    S_n / (sigma sqrt(n)) given Z_n > 0 (and X_n = j) against the Rayleigh law.

    The KS check and the median check run at the last horizon.

    Raises
    ------
    TooFewSurvivors
        Fewer than ``min_survivors`` survivors at the last horizon.
    """
    t0 = time.perf_counter()
    n_list = _as_list(n_list)
    sigma = _sigma(env, sigma)
    rows, criteria = _Rows(), []
    target = _target(env, j)
    rng = make_rng(seed, "bootstrap", 3)

    snaps = _branching(env, i, z, n_list, replicates, seed, block_size, threads)
    for n in n_list:
        snap = snaps[n]
        rows.add(n, MARGINAL, "sqrt_n_survival", np.sqrt(n) * snap.count / replicates)
        sample = (snap.s / (sigma * np.sqrt(n)))[_select(env, snap, target)]
        if sample.size:
            p, se = _binomial(int(np.sum(sample <= -0.1)), sample.size)
            rows.add(n, target, "negative_mass", p, se, 0.0, t=-0.1)

    n = n_list[-1]
    snap = snaps[n]
    _require(snap.count, min_survivors, "survivors", n)
    sample = (snap.s / (sigma * np.sqrt(n)))[_select(env, snap, target)]
    _require(sample.size, min_survivors, "survivors in the target state", n)
    _rayleigh_check(rows, criteria, rng, n, target, sample, "cdf")

    p, se = _binomial(int(np.sum(sample <= -0.1)), sample.size)
    limit = max(SE_FACTOR * se, 0.01)
    criteria.append(Criterion("negative_mass", p, limit, bool(p <= limit), "P(S_n/(sigma sqrt n) <= -0.1 | Z_n > 0)"))
    if env.d > 1:
        _marginal_criteria(env, rows, criteria, snap, n, "Z_n > 0")

    return _finish("1.3", n_list, rows, criteria, seed, ["branching", "bootstrap"], t0)


def yaglom_law(
    env: EnvironmentModel,
    i,
    z: int,
    j,
    n_list: NList,
    replicates: int,
    seed: int,
    sigma: Optional[float] = None,
    min_survivors: int = MIN_SURVIVORS,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> ExperimentReport:
    """
    log Z_n / (sigma sqrt(n)) given Z_n > 0 (and X_n = j) against the
    Rayleigh law, with the coupling diagnostic
    P(|log Z_n - S_n| / (sigma sqrt(n)) >= 0.25 | Z_n > 0) per horizon and
    the boundary mass P(Z_n = 1 | Z_n > 0).

    Censored populations keep log Z_n = log(2^53) and are counted in the
    table.
    """
    t0 = time.perf_counter()
    n_list = _as_list(n_list)
    sigma = _sigma(env, sigma)
    rows, criteria = _Rows(), []
    target = _target(env, j)
    rng = make_rng(seed, "bootstrap", 4)
    coupling = {}

    snaps = _branching(env, i, z, n_list, replicates, seed, block_size, threads)
    for n in n_list:
        snap = snaps[n]
        scale = sigma * np.sqrt(n)
        rows.add(n, MARGINAL, "sqrt_n_survival", np.sqrt(n) * snap.count / replicates)
        rows.add(n, MARGINAL, "censored", float(np.sum(snap.censored)))
        if snap.count == 0:
            continue
        log_z = np.log(snap.z.astype(float))
        p, se = _binomial(int(np.sum(np.abs(log_z - snap.s) / scale >= COUPLING_EPS)), snap.count)
        rows.add(n, MARGINAL, "coupling", p, se, 0.0, t=COUPLING_EPS)
        coupling[n] = (p, se)
        p1, se1 = _binomial(int(np.sum(snap.z == 1)), snap.count)
        rows.add(n, MARGINAL, "boundary_mass", p1, se1, 0.0, t=0.0)

    n = n_list[-1]
    snap = snaps[n]
    _require(snap.count, min_survivors, "survivors", n)
    sample = (np.log(snap.z.astype(float)) / (sigma * np.sqrt(n)))[_select(env, snap, target)]
    _require(sample.size, min_survivors, "survivors in the target state", n)
    _rayleigh_check(rows, criteria, rng, n, target, sample, "cdf")

    if len(n_list) >= 2 and n_list[0] in coupling:
        (a, a_se), (b, b_se) = coupling[n_list[0]], coupling[n]
        criteria.append(Criterion("coupling_shrinks", b - a, SE_FACTOR * a_se, bool(b <= a + SE_FACTOR * a_se),
                                  f"n={n_list[0]} vs n={n}"))
    if env.d > 1:
        _marginal_criteria(env, rows, criteria, snap, n, "Z_n > 0")

    return _finish("1.4", n_list, rows, criteria, seed, ["branching", "bootstrap"], t0)


def conditioned_clt_walk(
    env: EnvironmentModel,
    i,
    y: float,
    j,
    n_list: NList,
    replicates: int,
    seed: int,
    sigma: Optional[float] = None,
    min_survivors: int = MIN_SURVIVORS,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> ExperimentReport:
    """
    (y + S_n) / (sigma sqrt(n)) given tau_y > n (and X_n = j) against the
    Rayleigh law; P(X_n = j | tau_y > n) against nu(j).

    Raises
    ------
    ValueError
        If y <= 0 (the start is already killed).
    TooFewSurvivors
        Fewer than ``min_survivors`` unkilled paths at the last horizon.
    """
    if y <= 0:
        raise ValueError(f"Start level must be positive, got {y}")
    t0 = time.perf_counter()
    n_list = _as_list(n_list)
    sigma = _sigma(env, sigma)
    rows, criteria = _Rows(), []
    target = _target(env, j)
    rng = make_rng(seed, "bootstrap", 5)

    snaps = simulate_batch(
        env, i, 1, n_list, replicates, seed, module="walk", branching=False,
        kill_level=float(y), block_size=block_size, threads=threads,
    )
    for n in n_list:
        snap = snaps[n]
        p, se = _binomial(snap.count, replicates)
        rows.add(n, MARGINAL, "sqrt_n_unkilled", np.sqrt(n) * p, np.sqrt(n) * se)

    n = n_list[-1]
    snap = snaps[n]
    _require(snap.count, min_survivors, "unkilled paths", n)
    levels = (y + snap.s) / (sigma * np.sqrt(n))
    sample = levels[_select(env, snap, target)]
    _require(sample.size, min_survivors, "unkilled paths in the target state", n)
    _rayleigh_check(rows, criteria, rng, n, target, sample, "cdf")

    nonpositive = int(np.sum(levels <= 0.0))
    rows.add(n, MARGINAL, "nonpositive_count", nonpositive, reference=0.0)
    criteria.append(Criterion("positive_support", nonpositive, 0, nonpositive == 0, "y + S_n > 0 on tau_y > n"))
    if env.d > 1:
        _marginal_criteria(env, rows, criteria, snap, n, "tau_y > n")

    return _finish("P2.3", n_list, rows, criteria, seed, ["walk", "bootstrap"], t0)


def martingale_limit_laplace(
    env: EnvironmentModel,
    V: HarmonicTable,
    i,
    y: float,
    z: int,
    n_list: NList,
    replicates: int,
    seed: int,
    laplace_args: Sequence[float] = LAPLACE_ARGS,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> ExperimentReport:
    """
    P+ Laplace transform of W_n = Z_n e^{-S_n} and P+(W_n <= eps | Z_n > 0).

    P+ expectations reweight unkilled replicates (extinct ones included, with
    W_n = 0) by V(X_n, y + S_n) / V(i, y). Criteria: stability of the
    transform between the first and last horizon.
    """
    t0 = time.perf_counter()
    n_list = _as_list(n_list)
    start = env.state_index(i)
    denominator = V.value(start, y)
    rows, criteria = _Rows(), []
    transform = {}

    snaps = _branching(env, start, z, n_list, replicates, seed, block_size, threads,
                       keep_extinct=True, kill_level=float(y))
    for n in n_list:
        snap = snaps[n]
        w = np.zeros(replicates)
        w[: snap.count] = plus_weights(V, y, denominator, snap.x, snap.s, snap.min_s)
        W = np.zeros(replicates)
        alive = snap.z > 0
        W_tracked = np.zeros(snap.count)
        W_tracked[alive] = np.exp(np.log(snap.z[alive].astype(float)) - snap.s[alive])
        W[: snap.count] = W_tracked
        survive = np.zeros(replicates, dtype=bool)
        survive[: snap.count] = alive

        for a in laplace_args:
            values = w * np.exp(-a * W)
            est, se = float(values.mean()), float(values.std(ddof=1) / np.sqrt(replicates))
            rows.add(n, MARGINAL, "plus_laplace", est, se, t=a)
            transform[(n, a)] = (est, se)

        surv = w * survive
        p_surv = float(surv.mean())
        rows.add(n, MARGINAL, "plus_survival", p_surv, float(surv.std(ddof=1) / np.sqrt(replicates)))
        for eps in ATOM_LEVELS:
            small = w * (survive & (W <= eps))
            ratio = float(small.mean() / p_surv) if p_surv > 0 else float("nan")
            rows.add(n, MARGINAL, "plus_small_given_survival", ratio, t=eps)

    first, last = n_list[0], n_list[-1]
    if first != last:
        for a in laplace_args:
            (x, x_se), (v, v_se) = transform[(first, a)], transform[(last, a)]
            limit = SE_FACTOR * _combined(x_se, v_se)
            criteria.append(Criterion(f"plus_laplace_stable_{a:g}", abs(v - x), limit, bool(abs(v - x) <= limit),
                                      f"n={first} vs n={last}"))

    return _finish("W", n_list, rows, criteria, seed, ["branching"], t0)
