"""
Walk killed at the origin, its harmonic function and the h-transform.

- ``tau``: first k >= 1 with y + S_k <= 0.
- ``estimate_V``: Monte Carlo harmonic table V(i, y) from the killed
  martingale y + S_n + theta(X_n) at a large horizon, with drift detection.
- ``iterate_V_grid``: deterministic grid iteration of the same killed
  martingale, used to cross-check ``estimate_V``.
- P+ expectations are computed by reweighting plain simulation with
  V(X_n, y + S_n) 1{tau_y > n} / V(i, y) (``sample_plus``, ``estimate_U``).
- ``estimate_u``: survival constant 2/(sqrt(2 pi) sigma) V(i,y) U(i,y,z) at
  large y, with a plateau check.

Also exit-time profiles, the killed-survival bound, time-reversal duality
and the discounted-walk estimator.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.analysis_utils.agresti import q_infinity_reciprocal_paths
from utils.analysis_utils.spectral import CRITICAL_DEADBAND, sigma2
from utils.errors import (
    HorizonTooShort,
    NoPlateau,
    NotCritical,
    OutsideSupport,
    TailNotConverged,
)
from utils.general_utils import make_rng
from utils.model_utils.environment import MarkovKernel, dual_kernel, poisson_corrector, step_states
from utils.model_utils.simulate import (
    DEFAULT_BLOCK_SIZE,
    EnvironmentModel,
    Trajectory,
    simulate,
    simulate_batch,
)

log = logging.getLogger(__name__)

NOT_YET = None
SUPPORT_SE_FACTOR = 3.0
U_BLOCK_SIZE = 1024
U_MAX_EXTENSION = 8

SQRT_2PI = float(np.sqrt(2.0 * np.pi))


def tau(t: Trajectory, y: float, rho_vec: Optional[np.ndarray] = None) -> Optional[int]:
    """
    First k >= 1 with y + S_k <= 0, or ``NOT_YET`` within the horizon.

    ``rho_vec`` is accepted for callers holding only the states; by default
    the stored walk ``t.s`` is used.
    """
    s = t.s if rho_vec is None else np.concatenate([[0.0], np.cumsum(np.asarray(rho_vec)[t.x[1:]])])
    hits = np.nonzero(y + s[1:] <= 0.0)[0]
    return int(hits[0]) + 1 if hits.size else NOT_YET


def _require_critical(env: EnvironmentModel) -> None:
    drift = float(env.nu @ np.asarray(env.rho_vec))
    if abs(drift) > CRITICAL_DEADBAND:
        raise NotCritical(
            f"Environment is not critical: k'(0) = nu(rho) = {drift:.3e}", k_prime0=drift
        )


# -------------------------------------------------------------------------
## Harmonic table


@dataclass(frozen=True)
class HarmonicTable:
    """
    Grid approximation of V(i, y).

    Between grid points values are interpolated linearly; above the grid
    V(i, y) is extended with slope 1 and it vanishes for y <= 0.
    """

    states: Tuple[str, ...]
    y_grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    horizon: int
    theta: np.ndarray = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return len(self.states)

    def interpolate(self, states, levels) -> np.ndarray:
        """Vectorized V(states[r], levels[r])."""
        states, levels = np.broadcast_arrays(np.asarray(states, dtype=np.int64), np.asarray(levels, dtype=float))
        out = np.zeros(levels.shape)
        top = self.y_grid[-1]
        for st in range(self.d):
            sel = states == st
            if not sel.any():
                continue
            lv = levels[sel]
            # held at values[:, 0] on (0, y_grid[0]): V(i, 0+) is the mean undershoot, not 0
            vals = np.interp(lv, self.y_grid, self.values[st])
            above = lv > top
            vals[above] = self.values[st, -1] + (lv[above] - top)
            vals[lv <= 0.0] = 0.0
            out[sel] = vals
        return out

    def interpolate_se(self, states, levels) -> np.ndarray:
        states, levels = np.broadcast_arrays(np.asarray(states, dtype=np.int64), np.asarray(levels, dtype=float))
        out = np.zeros(levels.shape)
        for st in range(self.d):
            sel = states == st
            if sel.any():
                out[sel] = np.interp(levels[sel], self.y_grid, self.stderr[st])
        return out

    def value(self, i: int, y: float) -> float:
        return float(self.interpolate(i, y))

    def in_support(self, i: int, y: float) -> bool:
        """(i, y) is in the support iff V(i, y) > 3 SE."""
        return bool(self.value(i, y) > SUPPORT_SE_FACTOR * float(self.interpolate_se(i, y)))

    def to_frame(self) -> pd.DataFrame:
        """Long format, one row per (state, y); ``theta`` is NaN when unset."""
        theta = np.full(self.d, np.nan) if self.theta is None else np.asarray(self.theta, dtype=float)
        rows = []
        for st, label in enumerate(self.states):
            for y, v, se in zip(self.y_grid, self.values[st], self.stderr[st]):
                rows.append({"state": label, "y": y, "V": v, "stderr": se, "horizon": self.horizon,
                             "theta": theta[st]})
        return pd.DataFrame(rows)


def _killed_martingale(snapshot, grid: np.ndarray, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and SE of (y + S_n + theta(X_n)) 1{tau_y > n} for every y in ``grid``."""
    N = snapshot.total
    base = snapshot.s + theta[snapshot.x]
    alive = (grid[None, :] + snapshot.min_s[:, None]) > 0.0
    contrib = np.where(alive, grid[None, :] + base[:, None], 0.0)
    mean = contrib.sum(axis=0) / N
    second = (contrib**2).sum(axis=0) / N
    se = np.sqrt(np.maximum(second - mean**2, 0.0) / max(N - 1, 1))
    return mean, se


def estimate_V(
    env: EnvironmentModel,
    y_grid: Sequence[float],
    horizon: int,
    replicates: int,
    seed: int,
    corrector: bool = True,
    check_drift: bool = True,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
    verbose: bool = False,
) -> HarmonicTable:
    """
    Harmonic function of the killed walk on a grid of levels.

    V(i, y) is estimated by E_i[(y + S_n + theta(X_n)) 1{tau_y > n}] at the
    horizon n, theta being the Poisson corrector (zero when
    ``corrector=False``). The killed mass vanishes as n grows, so both
    choices have the same limit; the corrector removes the O(P(tau > n))
    bias term.

    Parameters
    ----------
    env : EnvironmentModel
        Critical environment.
    y_grid : sequence of float
        Increasing nonnegative levels.
    horizon : int
        Horizon n (>= 2).
    replicates : int
        Walk paths per starting state.
    seed : int
        Master seed.

    Returns
    -------
    HarmonicTable

    Raises
    ------
    NotCritical
        If |nu(rho)| exceeds the criticality dead-band.
    HorizonTooShort
        If at some grid point the estimates at n/2 and n differ by more than
        3 combined standard errors.
    """
    _require_critical(env)
    grid = np.asarray(y_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError(f"y_grid must be increasing and nonnegative, got {list(y_grid)}")
    if horizon < 2:
        raise ValueError(f"Horizon must be >= 2, got {horizon}")

    theta = poisson_corrector(env.kernel, env.rho_vec, env.nu) if corrector else np.zeros(env.d)
    half = horizon // 2

    values = np.empty((env.d, grid.size))
    errors = np.empty_like(values)
    for i in range(env.d):
        snaps = simulate_batch(
            env, i, 1, [half, horizon], replicates, seed,
            module=f"harmonic:{i}", branching=False, kill_level=float(grid[-1]),
            block_size=block_size, threads=threads, verbose=verbose,
        )
        values[i], errors[i] = _killed_martingale(snaps[horizon], grid, theta)

        if check_drift:
            half_values, half_errors = _killed_martingale(snaps[half], grid, theta)
            combined = np.sqrt(errors[i] ** 2 + half_errors**2)
            drifting = np.abs(values[i] - half_values) > 3.0 * combined
            if drifting.any():
                at = int(np.argmax(drifting))
                raise HorizonTooShort(
                    f"V({env.states[i]}, {grid[at]:g}) moved from {half_values[at]:.6g} at n={half} "
                    f"to {values[i, at]:.6g} at n={horizon} (combined SE {combined[at]:.3g})",
                    state=env.states[i],
                    y=float(grid[at]),
                )

    log.info("✓ Harmonic table: %d states x %d levels at n=%d", env.d, grid.size, horizon)
    return HarmonicTable(
        states=env.states, y_grid=grid, values=values, stderr=errors, horizon=int(horizon), theta=theta
    )


def iterate_V_grid(
    env: EnvironmentModel, y_grid: Sequence[float], iterations: int, corrector: bool = True
) -> np.ndarray:
    """
    Deterministic grid iteration of the killed martingale.

    Starts from V_0(i, y) = y + theta(i) and applies
    V_{k+1}(i, y) = sum_j P(i, j) 1{y + rho(j) > 0} V_k(j, y + rho(j)),
    interpolating on the grid and extending with slope 1 above it. After k
    steps this is E_i[(y + S_k + theta(X_k)) 1{tau_y > k}] up to grid error.

    Returns
    -------
    numpy.ndarray
        d x len(y_grid) values.
    """
    grid = np.asarray(y_grid, dtype=float)
    theta = poisson_corrector(env.kernel, env.rho_vec, env.nu) if corrector else np.zeros(env.d)
    rho_vec = np.asarray(env.rho_vec)
    P = env.kernel.rows
    top = grid[-1]

    current = grid[None, :] + theta[:, None]
    for _ in range(iterations):
        nxt = np.zeros_like(current)
        for j in range(env.d):
            levels = grid + rho_vec[j]
            vals = np.interp(levels, grid, current[j])
            above = levels > top
            vals[above] = current[j, -1] + (levels[above] - top)
            vals[levels <= 0.0] = 0.0
            nxt += P[:, j][:, None] * vals[None, :]
        current = nxt
    return current


def compare_harmonic(table: HarmonicTable, grid_values: np.ndarray, grid: Sequence[float]) -> pd.DataFrame:
    """
    Monte Carlo table against the grid iteration; disagreement beyond 3 SE is
    flagged, not resolved.
    """
    grid = np.asarray(grid, dtype=float)
    rows = []
    for st, label in enumerate(table.states):
        reference = np.interp(table.y_grid, grid, grid_values[st])
        for y, v, se, ref in zip(table.y_grid, table.values[st], table.stderr[st], reference):
            rows.append(
                {"state": label, "y": y, "V_mc": v, "stderr": se, "V_grid": ref,
                 "diff": v - ref, "agree": bool(abs(v - ref) <= 3.0 * se)}
            )
    return pd.DataFrame(rows)


def harmonicity_residuals(env: EnvironmentModel, table: HarmonicTable) -> pd.DataFrame:
    """
    One-step residual E_i[V(X_1, y + S_1); tau_y > 1] - V(i, y) at every grid
    point, the expectation summed exactly over successor states.

    Columns: state, y, V, residual, combined_se, ok (|residual| <= 3 SE).
    """
    rho_vec = np.asarray(env.rho_vec)
    P = env.kernel.rows
    rows = []
    for i in range(env.d):
        for col, y in enumerate(table.y_grid):
            levels = y + rho_vec
            successors = np.arange(env.d)
            v_next = table.interpolate(successors, levels)
            se_next = np.where(levels > 0.0, table.interpolate_se(successors, levels), 0.0)
            residual = float(P[i] @ v_next) - table.values[i, col]
            combined = float(np.sqrt(table.stderr[i, col] ** 2 + (P[i] ** 2) @ (se_next**2)))
            rows.append(
                {"state": table.states[i], "y": y, "V": table.values[i, col], "residual": residual,
                 "combined_se": combined, "ok": bool(abs(residual) <= 3.0 * combined)}
            )
    return pd.DataFrame(rows)


def exact_killed_martingale(env: EnvironmentModel, i: int, y: float, k: int, theta: np.ndarray) -> float:
    """E_i[(y + S_k + theta(X_k)) 1{tau_y > k}] by enumerating all d^k paths."""
    P = env.kernel.rows
    rho_vec = np.asarray(env.rho_vec)
    if k == 0:
        return float(y + theta[i])
    total = 0.0
    for path in itertools.product(range(env.d), repeat=k):
        prob, level, prev = 1.0, y, i
        for state in path:
            prob *= P[prev, state]
            level += rho_vec[state]
            prev = state
            if level <= 0.0 or prob == 0.0:
                break
        else:
            total += prob * (level + theta[prev])
    return total


def harmonic_identity_check(env: EnvironmentModel, y_list: Sequence[float], k: int) -> float:
    """
    Max deviation of the one-step recursion
    h_{k+1}(i, y) = sum_j P(i, j) 1{y + rho(j) > 0} h_k(j, y + rho(j))
    over states and levels, every h evaluated exactly by enumeration.
    """
    theta = poisson_corrector(env.kernel, env.rho_vec, env.nu)
    P = env.kernel.rows
    rho_vec = np.asarray(env.rho_vec)
    worst = 0.0
    for i in range(env.d):
        for y in y_list:
            lhs = exact_killed_martingale(env, i, y, k + 1, theta)
            rhs = sum(
                P[i, j] * exact_killed_martingale(env, j, y + rho_vec[j], k, theta)
                for j in range(env.d)
                if y + rho_vec[j] > 0.0
            )
            worst = max(worst, abs(lhs - rhs))
    return worst


# -------------------------------------------------------------------------
## Change of measure P+


@dataclass(frozen=True)
class WeightedSample:
    trajectory: Trajectory
    weight: float


def _check_support(V: HarmonicTable, i: int, y: float) -> float:
    if not V.in_support(i, y):
        raise OutsideSupport(
            f"({V.states[i]}, {y:g}) is outside the support of V (V = {V.value(i, y):.4g})",
            state=V.states[i],
            y=float(y),
        )
    return V.value(i, y)


def plus_weights(V: HarmonicTable, y: float, denominator: float, x_n, s_n, min_s) -> np.ndarray:
    """V(X_n, y + S_n) 1{tau_y > n} / V(i, y), vectorized."""
    alive = (y + np.asarray(min_s)) > 0.0
    return np.where(alive, V.interpolate(x_n, y + np.asarray(s_n)) / denominator, 0.0)


def sample_plus(
    env: EnvironmentModel, V: HarmonicTable, i, y: float, z: int, n: int, rng: np.random.Generator
) -> WeightedSample:
    """
    One trajectory under the original law with its P+ weight.

    Raises
    ------
    OutsideSupport
        If V(i, y) is not significantly positive.
    """
    start = env.state_index(i)
    denominator = _check_support(V, start, y)
    traj = simulate(env, start, z, n, rng)
    if n == 0:
        return WeightedSample(traj, 1.0)
    weight = float(plus_weights(V, y, denominator, traj.x[-1], traj.s[-1], traj.s[1:].min()))
    return WeightedSample(trajectory=traj, weight=weight)


def plus_mean_weight(
    env: EnvironmentModel, V: HarmonicTable, i, y: float, n: int, replicates: int, seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1,
) -> Tuple[float, float]:
    """Mean and SE of the P+ weight at horizon n (should be 1)."""
    start = env.state_index(i)
    denominator = _check_support(V, start, y)
    snap = simulate_batch(
        env, start, 1, [n], replicates, seed, module=f"plus-weight:{start}",
        branching=False, kill_level=y, block_size=block_size, threads=threads,
    )[n]
    weights = np.zeros(replicates)
    weights[: snap.count] = plus_weights(V, y, denominator, snap.x, snap.s, snap.min_s)
    return float(weights.mean()), float(weights.std(ddof=1) / np.sqrt(replicates))


def _walk_paths(env: EnvironmentModel, start: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Environment paths X_1..X_m (one row per start state)."""
    dtype = np.int16 if env.d < 2**15 else np.int64
    paths = np.empty((start.size, m), dtype=dtype)
    current = start.astype(np.int64)
    for k in range(m):
        current = step_states(env.cumulative, current, rng.random(current.size))
        paths[:, k] = current
    return paths


class UEstimate(NamedTuple):
    value: float
    stderr: float


def _plus_q_block(
    env: EnvironmentModel, V: HarmonicTable, start: int, y: float, z: int, horizon: int,
    size: int, rng: np.random.Generator, tail_tol: float, max_extension: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights, q-hat values and final tail ratios (0 once converged) for one block of P+ paths."""
    rho_vec = np.asarray(env.rho_vec)
    denominator = V.value(start, y)
    weights = np.zeros(size)
    q_hat = np.zeros(size)
    tails = np.zeros(size)

    rows = np.arange(size)
    paths = _walk_paths(env, np.full(size, start), horizon, rng)
    m = horizon
    while True:
        S = np.cumsum(rho_vec[paths], axis=1)
        w = plus_weights(V, y, denominator, paths[:, -1], S[:, -1], S.min(axis=1))
        positive = w > 0.0
        weights[rows] = w
        q_hat[rows] = 0.0
        tails[rows] = 0.0
        if not positive.any():
            break
        result = q_infinity_reciprocal_paths(env, paths[positive], z, 0.0)
        q_hat[rows[positive]] = 1.0 / result["value"]
        pending = np.zeros(rows.size, dtype=bool)
        pending[np.nonzero(positive)[0][result["tail_ratio"] > tail_tol]] = True
        if not pending.any():
            break
        if m >= max_extension * horizon:
            tails[rows[positive]] = result["tail_ratio"]
            break
        rows, paths = rows[pending], paths[pending]
        extra = _walk_paths(env, paths[:, -1].astype(np.int64), m, rng)
        paths = np.hstack([paths, extra])
        m *= 2
    return weights, q_hat, np.where(tails > tail_tol, tails, 0.0)


def estimate_U(
    env: EnvironmentModel,
    V: HarmonicTable,
    i,
    y: float,
    z: int,
    horizon: int,
    replicates: int,
    seed: int,
    tail_tol: float = 1e-9,
    max_extension: int = U_MAX_EXTENSION,
    block_size: int = U_BLOCK_SIZE,
) -> UEstimate:
    """
    U(i, y, z) = E+_{i,y}[q_{inf,z}(0)] by P+-weighted environment paths.

    Each path of length ``horizon`` with tau_y > horizon gets the weight
    V(X_m, y + S_m)/V(i, y) and the truncated q_{inf,z}(0). Paths whose
    last series term exceeds ``tail_tol`` of the running sum are doubled in
    length, up to ``max_extension`` times the horizon; the weight is then
    taken at the extended length. Paths are shared across z (streams keyed
    by state and block only).

    Paths still above ``tail_tol`` after extension are kept. Their
    truncation bias is bounded by weight x q x tail ratio per path.

    Raises
    ------
    OutsideSupport
        If (i, y) is outside the support of V.
    TailNotConverged
        If the truncation bias bound of the unconverged paths exceeds the
        Monte Carlo standard error.
    """
    start = env.state_index(i)
    _check_support(V, start, y)

    n_blocks = int(np.ceil(replicates / block_size))
    weights, q_values, tail_values = [], [], []
    for b in range(n_blocks):
        w, q, tails = _plus_q_block(
            env, V, start, y, z, horizon, block_size, make_rng(seed, "plus", start, b),
            tail_tol, max_extension,
        )
        weights.append(w)
        q_values.append(q)
        tail_values.append(tails)

    w = np.concatenate(weights)[:replicates]
    q = np.concatenate(q_values)[:replicates]
    tails = np.concatenate(tail_values)[:replicates]

    contrib = w * q
    value, stderr = float(contrib.mean()), float(contrib.std(ddof=1) / np.sqrt(replicates))
    unconverged = tails > 0.0
    if unconverged.any():
        bias = float(np.sum(contrib * tails) / replicates)
        share = float(w[unconverged].sum() / w.sum())
        if bias > stderr:
            raise TailNotConverged(
                f"{int(unconverged.sum())} P+ paths ({share:.2%} of the weight) did not converge within "
                f"{max_extension}x horizon; truncation bias bound {bias:.3g} exceeds SE {stderr:.3g}",
                share=share,
                bias=bias,
            )
        log.info("U(%s, %g, %d): %d paths truncated (%.3f%% of weight, bias bound %.2g)",
                 env.states[start], y, z, int(unconverged.sum()), 100 * share, bias)

    return UEstimate(value, stderr)


def estimate_U_survival(
    env: EnvironmentModel, V: HarmonicTable, i, y: float, z: int, horizon: int, replicates: int, seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1,
) -> UEstimate:
    """U(i, y, z) as the weighted survival frequency P+(Z_m > 0)."""
    start = env.state_index(i)
    denominator = _check_support(V, start, y)
    snap = simulate_batch(
        env, start, z, [horizon], replicates, seed, module=f"plus-survival:{start}",
        kill_level=y, block_size=block_size, threads=threads,
    )[horizon]
    contrib = np.zeros(replicates)
    contrib[: snap.count] = plus_weights(V, y, denominator, snap.x, snap.s, snap.min_s)
    return UEstimate(float(contrib.mean()), float(contrib.std(ddof=1) / np.sqrt(replicates)))


@dataclass(frozen=True)
class SurvivalConstant:
    value: float
    stderr: float
    diagnostics: pd.DataFrame = field(repr=False)


def estimate_u(
    env: EnvironmentModel,
    V: HarmonicTable,
    i,
    z: int,
    y_list: Sequence[float],
    horizon: Union[int, Sequence[int]],
    replicates: Union[int, Sequence[int]],
    seed: int,
    sigma: Optional[float] = None,
) -> SurvivalConstant:
    """
    Survival constant u(i, z) = lim_y 2/(sqrt(2 pi) sigma) V(i, y) U(i, y, z).

    Parameters
    ----------
    y_list : sequence of float
        Increasing levels; the value at the last one is returned.
    horizon, replicates : int or sequence of int
        P+ horizon and replicate count, either shared or one per level.
    sigma : float, optional
        Walk standard deviation; taken from the spectral series if omitted.

    Returns
    -------
    SurvivalConstant
        Value, SE and one diagnostics row per level (product, SE and the
        monotonicity flag against the previous level).

    Raises
    ------
    NotCritical
        If the environment is not critical.
    NoPlateau
        If the last two levels differ by more than 3 combined SE.
    """
    _require_critical(env)
    levels = [float(y) for y in y_list]
    if len(levels) < 2 or np.any(np.diff(levels) <= 0):
        raise ValueError(f"y_list needs at least two increasing levels, got {levels}")
    horizons = [horizon] * len(levels) if np.isscalar(horizon) else list(horizon)
    counts = [replicates] * len(levels) if np.isscalar(replicates) else list(replicates)
    if sigma is None:
        sigma = float(np.sqrt(sigma2(env)))
    constant = 2.0 / (SQRT_2PI * sigma)

    start = env.state_index(i)
    rows: List[dict] = []
    for y, n, N in zip(levels, horizons, counts):
        v, v_se = V.value(start, y), float(V.interpolate_se(start, y))
        u_est = estimate_U(env, V, start, y, z, int(n), int(N), seed)
        product = constant * v * u_est.value
        product_se = constant * float(np.hypot(v * u_est.stderr, u_est.value * v_se))
        rows.append({"y": y, "V": v, "V_se": v_se, "U": u_est.value, "U_se": u_est.stderr,
                     "product": product, "product_se": product_se})
        log.info("u(%s, %d) at y=%g: %.5g +- %.2g", env.states[start], z, y, product, product_se)

    diagnostics = pd.DataFrame(rows)
    diagnostics["monotone_ok"] = True
    for k in range(1, len(rows)):
        drop = rows[k - 1]["product"] - rows[k]["product"]
        diagnostics.loc[k, "monotone_ok"] = bool(drop <= 3.0 * rows[k]["product_se"])

    last, prev = rows[-1], rows[-2]
    combined = float(np.hypot(last["product_se"], prev["product_se"]))
    if abs(last["product"] - prev["product"]) > 3.0 * combined:
        raise NoPlateau(
            f"u estimates at y={prev['y']:g} and y={last['y']:g} differ by "
            f"{abs(last['product'] - prev['product']):.4g} (> 3 x {combined:.3g})",
            y=last["y"],
        )
    return SurvivalConstant(float(last["product"]), float(last["product_se"]), diagnostics)


def discounted_walk_mean(
    env: EnvironmentModel, V: HarmonicTable, i, y: float, horizon: int, replicates: int, seed: int,
    block_size: int = U_BLOCK_SIZE,
) -> UEstimate:
    """E+_{i,y}[sum_{k=0}^{m} e^{-S_k}] by weighted walk paths."""
    start = env.state_index(i)
    denominator = _check_support(V, start, y)
    rho_vec = np.asarray(env.rho_vec)
    contrib = []
    for b in range(int(np.ceil(replicates / block_size))):
        paths = _walk_paths(env, np.full(block_size, start), horizon, make_rng(seed, "plus-discount", start, b))
        S = np.cumsum(rho_vec[paths], axis=1)
        w = plus_weights(V, y, denominator, paths[:, -1], S[:, -1], S.min(axis=1))
        contrib.append(w * (1.0 + np.exp(-S).sum(axis=1)))
    values = np.concatenate(contrib)[:replicates]
    return UEstimate(float(values.mean()), float(values.std(ddof=1) / np.sqrt(replicates)))


# -------------------------------------------------------------------------
## Exit times and bounds


def exit_time_profile(
    env: EnvironmentModel, V: HarmonicTable, i, y: float, n_list: Sequence[int], replicates: int, seed: int,
    sigma: Optional[float] = None, block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1,
) -> pd.DataFrame:
    """
    sqrt(n) P_i(X_n = j, tau_y > n) against 2 V(i, y) nu(j) / (sqrt(2 pi) sigma).

    Columns: n, j, p_hat, se, scaled, scaled_se, reference, ok (last n only
    is meaningful: within max(5%, 4 SE) of the reference).
    """
    start = env.state_index(i)
    if sigma is None:
        sigma = float(np.sqrt(sigma2(env)))
    snaps = simulate_batch(
        env, start, 1, n_list, replicates, seed, module=f"exit:{start}",
        branching=False, kill_level=y, block_size=block_size, threads=threads,
    )
    v = V.value(start, y)
    rows = []
    for n in sorted(snaps):
        snap = snaps[n]
        for j, label in enumerate(env.states):
            p = float(np.sum(snap.x == j)) / replicates
            se = float(np.sqrt(p * (1.0 - p) / replicates))
            reference = 2.0 * v * env.nu[j] / (SQRT_2PI * sigma)
            scaled, scaled_se = np.sqrt(n) * p, np.sqrt(n) * se
            rows.append({"n": n, "j": label, "p_hat": p, "se": se, "scaled": scaled,
                         "scaled_se": scaled_se, "reference": reference,
                         "ok": bool(abs(scaled - reference) <= max(0.05 * reference, 4.0 * scaled_se))})
    return pd.DataFrame(rows)


def exit_time_bound(
    env: EnvironmentModel, i, y_list: Sequence[float], n_list: Sequence[int], replicates: int, seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> Tuple[float, pd.DataFrame]:
    """
    Fitted C of sqrt(n) P_i(X_n = j, tau_y > n) <= C (1 + max(y, 0)).

    Returns the single constant across all (y, n, j) and the table of ratios.
    """
    start = env.state_index(i)
    rows = []
    for y in y_list:
        snaps = simulate_batch(
            env, start, 1, n_list, replicates, seed, module=f"exit:{start}",
            branching=False, kill_level=float(y), block_size=block_size,
        )
        for n, snap in snaps.items():
            for j, label in enumerate(env.states):
                p = float(np.sum(snap.x == j)) / replicates
                rows.append({"y": y, "n": n, "j": label, "p_hat": p,
                             "ratio": np.sqrt(n) * p / (1.0 + max(float(y), 0.0))})
    table = pd.DataFrame(rows)
    return float(table["ratio"].max()), table


def killed_survival_bound(
    env: EnvironmentModel, i, z: int, y_list: Sequence[float], n: int, replicates: int, seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE, threads: int = 1,
) -> Tuple[float, pd.DataFrame]:
    """
    sqrt(n) P(Z_n > 0, tau_y <= n) e^y / (z (1 + y)) for every level.

    One branching batch serves all levels (tau_y <= n iff y + min S <= 0).
    Returns the fitted constant (max over levels) and the table.
    """
    start = env.state_index(i)
    snap = simulate_batch(
        env, start, z, [n], replicates, seed, module="branching",
        block_size=block_size, threads=threads,
    )[n]
    rows = []
    for y in y_list:
        p = float(np.sum(y + snap.min_s <= 0.0)) / replicates
        se = float(np.sqrt(p * (1.0 - p) / replicates))
        factor = np.sqrt(n) * np.exp(y) / (z * (1.0 + max(float(y), 0.0)))
        rows.append({"y": y, "n": n, "p_hat": p, "se": se, "scaled": factor * p, "scaled_se": factor * se})
    table = pd.DataFrame(rows)
    return float(table["scaled"].max()), table


# -------------------------------------------------------------------------
## Time reversal


def duality_check(kernel: MarkovKernel, nu: np.ndarray, n: int) -> float:
    """
    Max deviation of E_i[g(X_1..X_n); X_{n+1} = j] and
    E*_j[g(X*_n..X*_1); X*_{n+1} = i] nu(j)/nu(i) over all indicator g.

    Both sides are enumerated over every (i, x_1..x_n, j).
    """
    P = kernel.rows
    dual = dual_kernel(kernel, nu).rows
    worst = 0.0
    for i, j in itertools.product(range(kernel.d), repeat=2):
        for path in itertools.product(range(kernel.d), repeat=n):
            forward = P[i, path[0]]
            for a, b in zip(path, path[1:]):
                forward *= P[a, b]
            forward *= P[path[-1], j]

            reverse = dual[j, path[-1]]
            for a, b in zip(path[::-1], path[::-1][1:]):
                reverse *= dual[a, b]
            reverse *= dual[path[0], i]
            worst = max(worst, abs(forward - reverse * nu[j] / nu[i]))
    return worst
