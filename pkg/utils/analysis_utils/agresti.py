"""
Conditional non-extinction functionals given the environment.

q_{n,z}(s) = 1 - (f_{X_1} o ... o f_{X_n}(s))^z is evaluated two ways:

- directly, composing the pgfs right to left;
- through the reciprocal decomposition
  1/q = (1/z)(e^{-S_n}/(1-s) + sum_{k<n} e^{-S_k} eta_{k+1,n}(s)) + psi_z(F_n(s)),
  with eta_{k,n}(s) = phi_{X_k}(f_{X_{k+1}} o ... o f_{X_n}(s)).

All compositions run in complement form (t = 1 - s) so that values close to
1 keep their precision. Path arguments are state-index arrays X_1..X_n; the
``*_paths`` variants take an (N, n) matrix of paths.
"""

import logging
from typing import Dict, Sequence

import numpy as np

from utils.errors import DomainError, TailNotConverged
from utils.model_utils.offspring import (
    pgf_complement,
    phi_complement,
    power_complement,
    psi_complement,
)
from utils.model_utils.simulate import EnvironmentModel

log = logging.getLogger(__name__)

TAIL_TOL = 1e-9
CANONICAL_TOL = 1e-9


def as_path(env: EnvironmentModel, states: Sequence) -> np.ndarray:
    """
    Validate an environment path X_1..X_n given as labels or indices.

    Raises
    ------
    ValueError
        If the path is empty or mentions an unknown state.
    """
    if len(states) == 0:
        raise ValueError("Environment path must be nonempty")
    try:
        return np.array([env.state_index(x) for x in states], dtype=np.int64)
    except KeyError as err:
        raise ValueError(str(err)) from err


def _check_args(z: int, s: float, open_right: bool) -> None:
    if int(z) < 1:
        raise DomainError(f"z must be a positive integer, got {z}")
    upper_ok = s < 1.0 if open_right else s <= 1.0
    if not (0.0 <= s and upper_ok):
        raise DomainError(f"s must lie in [0, 1{')' if open_right else ']'}, got {s}")


def _apply_by_state(env: EnvironmentModel, func, states: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    for state in range(env.d):
        sel = states == state
        if sel.any():
            out[sel] = func(env.laws[state], values[sel])
    return out


def complements(env: EnvironmentModel, path: np.ndarray, s: float) -> np.ndarray:
    """
    c[k] = 1 - f_{X_{k+1}} o ... o f_{X_n}(s) for k = 0..n (c[n] = 1 - s).
    """
    n = len(path)
    c = np.empty(n + 1)
    c[n] = 1.0 - s
    for k in range(n, 0, -1):
        c[k - 1] = pgf_complement(env.laws[path[k - 1]], c[k])
    return c


def walk(env: EnvironmentModel, path: np.ndarray) -> np.ndarray:
    """S_0..S_n along the path."""
    return np.concatenate([[0.0], np.cumsum(np.asarray(env.rho_vec)[path])])


def q_direct(env: EnvironmentModel, path, z: int, s: float) -> float:
    """
    q_{n,z}(s) by right-to-left composition.

    Examples
    --------
    Critical linear-fractional single state f(s) = 1/(2 - s), n = 5, z = 1,
    s = 0 gives 1/6.
    """
    _check_args(z, s, open_right=False)
    path = np.asarray(path, dtype=np.int64)
    c0 = complements(env, path, s)[0]
    value = float(np.clip(power_complement(int(z), c0), 0.0, 1.0))
    if s == 0.0:
        bound = int(z) * np.exp(walk(env, path)[-1])
        if value > bound * (1.0 + 1e-12):
            log.warning("q_{n,z}(0) = %.6g exceeds z e^{S_n} = %.6g", value, bound)
    return value


def eta_sequence(env: EnvironmentModel, path, s: float) -> np.ndarray:
    """eta_{1,n}(s), ..., eta_{n,n}(s)."""
    _check_args(1, s, open_right=True)
    path = np.asarray(path, dtype=np.int64)
    c = complements(env, path, s)
    return np.array([phi_complement(env.laws[path[k - 1]], c[k]) for k in range(1, len(path) + 1)])


def decomposition_paths(env: EnvironmentModel, paths: np.ndarray, z: int, s: float) -> Dict[str, np.ndarray]:
    """
    Terms of the reciprocal decomposition for every row of ``paths``.

    Single backward pass: only O(N) state besides the walk matrix.

    Returns
    -------
    dict
        ``series``: sum_{k<n} e^{-S_k} eta_{k+1,n}(s);
        ``last_term``: e^{-S_{n-1}} eta_{n,n}(s);
        ``boundary``: e^{-S_n} / (1 - s);
        ``psi``: psi_z(F_n(s));
        ``c0``: 1 - F_n(s).
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=np.int64))
    N, n = paths.shape
    rho_vec = np.asarray(env.rho_vec)
    S = np.zeros((N, n + 1))
    S[:, 1:] = np.cumsum(rho_vec[paths], axis=1)

    c = np.full(N, 1.0 - s)
    series = np.zeros(N)
    last_term = np.zeros(N)
    for k in range(n, 0, -1):
        states = paths[:, k - 1]
        term = np.exp(-S[:, k - 1]) * _apply_by_state(env, phi_complement, states, c)
        if k == n:
            last_term = term
        series += term
        c = _apply_by_state(env, pgf_complement, states, c)

    return {
        "series": series,
        "last_term": last_term,
        "boundary": np.exp(-S[:, n]) / (1.0 - s),
        "psi": np.asarray(psi_complement(int(z), c), dtype=float),
        "c0": c,
    }


def q_decomposed(env: EnvironmentModel, path, z: int, s: float) -> float:
    """
    q_{n,z}(s) through the reciprocal decomposition, s in [0, 1).

    Examples
    --------
    n = 1, Geometric(p=2/3), z = 1, s = 0: 1/q = 0.5 + 1.0, q = 2/3.
    """
    _check_args(z, s, open_right=True)
    terms = decomposition_paths(env, np.asarray(path)[None, :], z, s)
    reciprocal = (terms["series"][0] + terms["boundary"][0]) / int(z) + terms["psi"][0]
    return float(1.0 / reciprocal)


def q_canonical(env: EnvironmentModel, path, z: int, s: float) -> float:
    """Both evaluations; the decomposed one wins when they disagree beyond 1e-9."""
    direct = q_direct(env, path, z, s)
    if s >= 1.0:
        return direct
    decomposed = q_decomposed(env, path, z, s)
    if abs(direct - decomposed) > CANONICAL_TOL * max(decomposed, 1e-300):
        log.info("q direct %.17g vs decomposed %.17g; using decomposed", direct, decomposed)
    return decomposed


def q_infinity_reciprocal_paths(
    env: EnvironmentModel, paths: np.ndarray, z: int, s: float = 0.0
) -> Dict[str, np.ndarray]:
    """
    Truncated 1/q_{inf,z}(s) for every path, with the tail ratio.

    Returns
    -------
    dict
        ``value``: (1/z) series + psi term; ``tail_ratio``: last series term
        over the running sum.
    """
    _check_args(z, s, open_right=True)
    terms = decomposition_paths(env, paths, z, s)
    value = terms["series"] / int(z) + terms["psi"]
    tail_ratio = terms["last_term"] / terms["series"]
    return {"value": value, "tail_ratio": tail_ratio}


def q_infinity_reciprocal(env: EnvironmentModel, path, z: int, s: float = 0.0, tol: float = TAIL_TOL) -> float:
    """
    Truncated reciprocal of q_{inf,z}(s) along a long path prefix.

    eta_{k,inf} and psi_{z,inf} are replaced by their horizon-n values.

    Raises
    ------
    TailNotConverged
        If the last included term exceeds ``tol`` times the running sum.
    """
    result = q_infinity_reciprocal_paths(env, np.asarray(path)[None, :], z, s)
    ratio = float(result["tail_ratio"][0])
    if ratio > tol:
        raise TailNotConverged(
            f"Last term is {ratio:.3e} of the running sum (tolerance {tol:g}); extend the path",
            tail_ratio=ratio,
            horizon=len(path),
        )
    return float(result["value"][0])
