"""
Forward simulation of the joint chain (X_n, Z_n) and of the walk S_n.

Within a step the environment moves first and the generation then
reproduces under the law of the NEW state X_n. Two engines are provided:

- ``simulate``: one trajectory, scalar loop, full history.
- ``simulate_batch``: many replicates in fixed-size blocks with
  vectorized draws, returning snapshots of the tracked replicates at a
  list of checkpoints. Every estimator in the analysis package runs on it.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import BPMEError, IndexOutOfRange, PopulationOverflow
from utils.general_utils import make_streams
from utils.model_utils.environment import (
    MarkovKernel,
    primitivity_index,
    stationary_distribution,
    step_states,
)
from utils.model_utils.offspring import (
    MAX_POPULATION,
    OffspringLaw,
    moments,
    rho,
    sample_total,
    sample_totals,
)

log = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 4096


@dataclass(frozen=True)
class EnvironmentModel:
    """Markov kernel plus one offspring law per state; rho(i) cached."""

    kernel: MarkovKernel
    laws: Tuple[OffspringLaw, ...]
    rho_vec: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def states(self) -> Tuple[str, ...]:
        return self.kernel.states

    @cached_property
    def nu(self) -> np.ndarray:
        return stationary_distribution(self.kernel)

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.kernel.rows, axis=1)

    @cached_property
    def phi_bound(self) -> float:
        """max_i f_i''(1) / f_i'(1)^2, the upper bound of every eta."""
        values = [m.second_factorial / m.mean**2 for m in (moments(law) for law in self.laws)]
        return float(max(values))

    def state_index(self, state) -> int:
        return self.kernel.index(state)

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "kernel": self.kernel.rows.tolist(),
            "offspring": {s: law.to_dict() for s, law in zip(self.states, self.laws)},
        }


def build_environment(kernel: MarkovKernel, laws: Sequence[OffspringLaw]) -> EnvironmentModel:
    """
    Assemble an environment, checking Conditions 1, 2 and 4 state by state.

    Raises
    ------
    ValueError
        If the number of laws does not match the kernel.
    Condition2Violated, Condition4Violated
        Re-raised with the offending state in the message and context.
    NotPrimitiveError
        If the kernel is not primitive.
    """
    laws = tuple(laws)
    if len(laws) != kernel.d:
        raise ValueError(f"Got {len(laws)} offspring laws for {kernel.d} states")

    rho_values = []
    for label, law in zip(kernel.states, laws):
        try:
            rho_values.append(rho(law))
        except BPMEError as err:
            raise type(err)(f"State '{label}': {err.message}", state=label) from err

    primitivity_index(kernel)
    rho_vec = np.array(rho_values, dtype=float)
    rho_vec.setflags(write=False)
    return EnvironmentModel(kernel=kernel, laws=laws, rho_vec=rho_vec)


# -------------------------------------------------------------------------
## Single trajectories


@dataclass(frozen=True)
class Trajectory:
    """
    Aligned X_0..X_n (state indices), Z_0..Z_n and S_0..S_n.

    ``censored_at`` is the first step whose population overflowed; from there
    on ``z`` holds ``MAX_POPULATION``.
    """

    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    weight: float = 1.0
    censored_at: Optional[int] = None

    @property
    def horizon(self) -> int:
        return len(self.x) - 1

    def to_frame(self, states: Optional[Sequence[str]] = None) -> pd.DataFrame:
        labels = np.asarray(states)[self.x] if states is not None else self.x
        return pd.DataFrame(
            {"step": np.arange(len(self.x)), "x": labels, "z": self.z, "s": self.s}
        )


def walk_from_states(rho_vec: np.ndarray, x: np.ndarray) -> np.ndarray:
    """S_0..S_n from X_0..X_n (S_0 = 0, increments rho(X_k) for k >= 1)."""
    s = np.zeros(len(x))
    s[1:] = np.cumsum(rho_vec[np.asarray(x)[1:]])
    return s


def simulate(
    env: EnvironmentModel,
    i,
    z: int,
    n: int,
    rng: Union[np.random.Generator, Tuple[np.random.Generator, np.random.Generator]],
    per_individual: bool = False,
) -> Trajectory:
    """
    Simulate one trajectory of (X, Z, S) up to horizon ``n``.

    Parameters
    ----------
    env : EnvironmentModel
    i : int or str
        Initial state (index or label).
    z : int
        Initial population, z >= 0.
    n : int
        Horizon, n >= 0.
    rng : numpy.random.Generator or tuple
        Either a generator, split into independent environment and
        offspring children, or an explicit ``(env_rng, offspring_rng)`` pair.
    per_individual : bool, optional
        Sample every individual instead of the generation total.

    Returns
    -------
    Trajectory
    """
    if n < 0:
        raise ValueError(f"Horizon must be nonnegative, got {n}")
    if z < 0:
        raise ValueError(f"Initial population must be nonnegative, got {z}")
    env_rng, off_rng = rng if isinstance(rng, tuple) else rng.spawn(2)

    start = env.state_index(i)
    cumulative = env.cumulative
    x = np.empty(n + 1, dtype=np.int64)
    zs = np.empty(n + 1, dtype=np.int64)
    x[0], zs[0] = start, z
    censored_at = None

    population = int(z)
    for k in range(1, n + 1):
        u = env_rng.random()
        x[k] = min(int(np.searchsorted(cumulative[x[k - 1]], u, side="right")), env.d - 1)
        if population > 0 and censored_at is None:
            try:
                population = sample_total(env.laws[x[k]], population, off_rng, per_individual)
            except PopulationOverflow:
                censored_at = k
                population = MAX_POPULATION
                log.debug("trajectory censored at step %d", k)
        zs[k] = population

    return Trajectory(x=x, z=zs, s=walk_from_states(env.rho_vec, x), censored_at=censored_at)


def survival_indicator(t: Trajectory, n: int) -> bool:
    """Z_n > 0 on trajectory ``t``."""
    if not 0 <= n <= t.horizon:
        raise IndexOutOfRange(f"Index {n} outside 0..{t.horizon}", index=n)
    return bool(t.z[n] > 0)


# -------------------------------------------------------------------------
## Batch simulation


@dataclass(frozen=True)
class Snapshot:
    """
    Tracked replicates at step ``n`` of a batch.

    ``total`` counts every simulated replicate; the arrays only cover the
    tracked ones (alive populations in branching mode, unkilled walks in
    walk mode). ``min_s`` is min_{1<=k<=n} S_k (+inf at n = 0).
    """

    n: int
    total: int
    index: np.ndarray
    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    min_s: np.ndarray
    censored: np.ndarray

    @property
    def count(self) -> int:
        return int(self.index.size)

    def alive(self) -> np.ndarray:
        return self.z > 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "replicate": self.index,
                "x": self.x,
                "z": self.z,
                "s": self.s,
                "min_s": self.min_s,
                "censored": self.censored,
            }
        )


def _empty_record(n: int) -> Dict[str, np.ndarray]:
    return {
        "n": n,
        "index": np.empty(0, dtype=np.int64),
        "x": np.empty(0, dtype=np.int64),
        "z": np.empty(0, dtype=np.int64),
        "s": np.empty(0),
        "min_s": np.empty(0),
        "censored": np.empty(0, dtype=bool),
    }


def _simulate_block(
    env: EnvironmentModel,
    i: int,
    z: int,
    checkpoints: Sequence[int],
    size: int,
    offset: int,
    env_rng: np.random.Generator,
    off_rng: np.random.Generator,
    branching: bool,
    keep_extinct: bool,
    kill_level: Optional[float],
) -> List[Dict[str, np.ndarray]]:
    cumulative = env.cumulative
    rho_vec = np.asarray(env.rho_vec)
    horizon = max(checkpoints)
    wanted = set(checkpoints)

    idx = np.arange(size, dtype=np.int64) + offset
    x = np.full(size, i, dtype=np.int64)
    pop = np.full(size, z if branching else 1, dtype=np.int64)
    s = np.zeros(size)
    min_s = np.full(size, np.inf)
    censored = np.zeros(size, dtype=bool)

    if branching and not keep_extinct and z == 0:
        idx, x, pop, s, min_s, censored = (a[:0] for a in (idx, x, pop, s, min_s, censored))

    def record(k: int) -> Dict[str, np.ndarray]:
        return {
            "n": k,
            "index": idx.copy(),
            "x": x.copy(),
            "z": pop.copy(),
            "s": s.copy(),
            "min_s": min_s.copy(),
            "censored": censored.copy(),
        }

    records = []
    if 0 in wanted:
        records.append(record(0))

    for k in range(1, horizon + 1):
        if idx.size == 0:
            records.extend(_empty_record(n) for n in sorted(wanted) if n >= k)
            break

        x = step_states(cumulative, x, env_rng.random(idx.size))
        s = s + rho_vec[x]
        min_s = np.minimum(min_s, s)

        if branching:
            for state in range(env.d):
                sel = (x == state) & (pop > 0) & ~censored
                if sel.any():
                    totals, overflow = sample_totals(env.laws[state], pop[sel], off_rng)
                    pop[sel] = totals
                    censored[sel] |= overflow

        keep = np.ones(idx.size, dtype=bool)
        if kill_level is not None:
            keep &= kill_level + s > 0
        if branching and not keep_extinct:
            keep &= pop > 0
        if not keep.all():
            idx, x, pop, s, min_s, censored = (
                idx[keep], x[keep], pop[keep], s[keep], min_s[keep], censored[keep]
            )

        if k in wanted:
            records.append(record(k))

    return records


def simulate_batch(
    env: EnvironmentModel,
    i,
    z: int,
    checkpoints: Sequence[int],
    replicates: int,
    seed: int,
    module: str = "branching",
    branching: bool = True,
    keep_extinct: bool = False,
    kill_level: Optional[float] = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
    verbose: bool = False,
) -> Dict[int, Snapshot]:
    """
    Simulate ``replicates`` independent copies and snapshot them at checkpoints.

    Replicates are processed in blocks of ``block_size``; block ``b`` draws
    from the streams keyed by ``(seed, module, b)`` and is always simulated
    in full, so replicate ``r`` does not depend on the total count.

    Parameters
    ----------
    env : EnvironmentModel
    i : int or str
        Initial state.
    z : int
        Initial population (ignored in walk mode).
    checkpoints : sequence of int
        Steps at which tracked replicates are recorded.
    replicates : int
        Number of replicates kept in the output.
    seed : int
        Master seed.
    module : str, optional
        Module id mixed into the stream keys.
    branching : bool, optional
        Simulate the population (True) or only the walk (False).
    keep_extinct : bool, optional
        Keep tracking extinct replicates (their walk keeps moving).
    kill_level : float, optional
        Level y; replicates are dropped at the first k with y + S_k <= 0.
    block_size : int, optional
        Replicates per RNG block.
    threads : int, optional
        Worker threads; results are assembled in block order.
    verbose : bool, optional
        Log progress at INFO.

    Returns
    -------
    dict of int to Snapshot
    """
    checkpoints = sorted({int(n) for n in checkpoints})
    if not checkpoints or checkpoints[0] < 0:
        raise ValueError(f"Checkpoints must be nonnegative and nonempty, got {checkpoints}")
    if replicates < 1:
        raise ValueError(f"Replicates must be >= 1, got {replicates}")
    start = env.state_index(i)
    n_blocks = math.ceil(replicates / block_size)
    level = logging.INFO if verbose else logging.DEBUG
    t0 = time.perf_counter()

    def run_block(b: int) -> List[Dict[str, np.ndarray]]:
        env_rng, off_rng = make_streams(seed, module, b)
        return _simulate_block(
            env, start, z, checkpoints, block_size, b * block_size,
            env_rng, off_rng, branching, keep_extinct, kill_level,
        )

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run_block, range(n_blocks)))
    else:
        blocks = [run_block(b) for b in range(n_blocks)]

    snapshots = {}
    for position, n in enumerate(checkpoints):
        parts = [block[position] for block in blocks]
        merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0] if key != "n"}
        keep = merged["index"] < replicates
        snapshots[n] = Snapshot(
            n=n,
            total=int(replicates),
            **{key: value[keep] for key, value in merged.items()},
        )

    log.log(
        level,
        "✓ %d replicates (%s) simulated to n=%d in %d blocks, %.2fs; %d tracked at the horizon",
        replicates, module, checkpoints[-1], n_blocks, time.perf_counter() - t0,
        snapshots[checkpoints[-1]].count,
    )
    return snapshots
