"""
Finite-state Markov environment.

Kernel validation, primitivity, stationary distribution, mixing
diagnostics, dual (time-reversed) kernel and the Poisson corrector that
turns the additive walk into a martingale.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from utils.errors import (
    NegativeEntryError,
    NonStochasticError,
    NotPrimitiveError,
    ZeroMassError,
)

log = logging.getLogger(__name__)

# Row sums within this residual are renormalized, beyond it rejected
ROW_SUM_TOL = 1e-9
STATIONARY_TOL = 1e-13
STATIONARY_MAX_ITER = 1_000_000


@dataclass(frozen=True)
class MarkovKernel:
    """
    Row-stochastic d x d transition matrix with ordered state labels.

    ``rows`` is stored as a read-only float array.
    """

    states: Tuple[str, ...]
    rows: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        """Position of a state given by label or integer index."""
        if isinstance(state, (int, np.integer)):
            if not 0 <= int(state) < self.d:
                raise KeyError(f"State index {state} out of range for d={self.d}")
            return int(state)
        try:
            return self.states.index(str(state))
        except ValueError:
            raise KeyError(f"Unknown state '{state}'. Known states: {list(self.states)}")


def validate_kernel(rows, states: Optional[Sequence[str]] = None) -> MarkovKernel:
    """
    Validate a square nonnegative matrix as a Markov kernel.

    Parameters
    ----------
    rows : array_like
        d x d matrix of transition probabilities.
    states : sequence of str, optional
        State labels. Defaults to "0", ..., "d-1".

    Returns
    -------
    MarkovKernel
        Kernel whose rows are renormalized to sum exactly to 1.

    Raises
    ------
    ValueError
        If the matrix is not square or labels do not match its size.
    NegativeEntryError
        If any entry is negative or not finite.
    NonStochasticError
        If a row sum deviates from 1 by more than 1e-9.

    Examples
    --------
    >>> validate_kernel([[0.5, 0.5], [0.5, 0.5]]).d
    2
    """
    matrix = np.array(rows, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
        raise ValueError(f"Kernel must be a non-empty square matrix, got shape {matrix.shape}")

    d = matrix.shape[0]
    labels = tuple(str(s) for s in states) if states is not None else tuple(str(i) for i in range(d))
    if len(labels) != d:
        raise ValueError(f"Got {len(labels)} state labels for a {d}x{d} kernel")
    if len(set(labels)) != d:
        raise ValueError(f"State labels must be unique: {list(labels)}")

    if not np.all(np.isfinite(matrix)):
        raise NegativeEntryError("Kernel has non-finite entries")
    negative = np.argwhere(matrix < 0)
    if negative.size:
        i, j = negative[0]
        raise NegativeEntryError(
            f"Negative transition probability P({labels[i]},{labels[j]}) = {matrix[i, j]}",
            row=labels[i],
        )

    sums = matrix.sum(axis=1)
    for i, total in enumerate(sums):
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise NonStochasticError(
                f"Row '{labels[i]}' sums to {total!r}, expected 1", row=labels[i]
            )

    matrix = matrix / sums[:, None]
    matrix.setflags(write=False)
    return MarkovKernel(states=labels, rows=matrix)


def primitivity_index(kernel: MarkovKernel) -> int:
    """
    Smallest k0 with every entry of P^k0 strictly positive.

    Decided exactly with boolean matrix powers up to the Wielandt bound
    (d-1)^2 + 1.

    Raises
    ------
    NotPrimitiveError
        If no power up to the bound is strictly positive.
    """
    d = kernel.d
    support = (kernel.rows > 0).astype(np.int64)
    power = support.copy()
    bound = (d - 1) ** 2 + 1
    for k0 in range(1, bound + 1):
        if power.all():
            return k0
        power = ((power @ support) > 0).astype(np.int64)
    raise NotPrimitiveError(
        f"Kernel is not primitive: no positive power up to the Wielandt bound {bound}"
    )


def stationary_distribution(
    kernel: MarkovKernel, tol: float = STATIONARY_TOL, max_iter: int = STATIONARY_MAX_ITER
) -> np.ndarray:
    """
    Unique invariant probability of a primitive kernel by power iteration.

    Parameters
    ----------
    kernel : MarkovKernel
        Primitive kernel.
    tol : float, optional
        Stop once ||nu P - nu||_1 <= tol (default 1e-13).
    max_iter : int, optional
        Iteration cap (default 10^6).

    Returns
    -------
    numpy.ndarray
        Strictly positive probability vector of length d.

    Raises
    ------
    NotPrimitiveError
        If the kernel is not primitive.
    RuntimeError
        If the residual does not reach ``tol`` within ``max_iter``.
    """
    primitivity_index(kernel)

    P = kernel.rows
    nu = np.full(kernel.d, 1.0 / kernel.d)
    for iteration in range(max_iter):
        nxt = nu @ P
        nxt /= nxt.sum()
        residual = np.abs(nxt - nu).sum()
        nu = nxt
        if residual <= tol:
            break
    else:
        raise RuntimeError(
            f"Stationary distribution did not converge: residual {residual:.3e} after {max_iter} iterations"
        )

    log.debug("stationary distribution after %d iterations: %s", iteration + 1, nu)
    return nu


def mixing_decay(kernel: MarkovKernel, nu: np.ndarray, n_max: int) -> np.ndarray:
    """
    Sup-norm distances delta_n = max_{i,j} |P^n(i,j) - nu(j)| for n = 1..n_max.

    Returns
    -------
    numpy.ndarray
        Array of length ``n_max``; entry ``n-1`` is delta_n.
    """
    P = kernel.rows
    nu = np.asarray(nu, dtype=float)
    deltas = np.empty(n_max)
    power = np.eye(kernel.d)
    for n in range(n_max):
        power = power @ P
        deltas[n] = np.abs(power - nu[None, :]).max()
    return deltas


def dual_kernel(kernel: MarkovKernel, nu: np.ndarray) -> MarkovKernel:
    """
    Time-reversed kernel P*(i,j) = nu(j) P(j,i) / nu(i).

    Raises
    ------
    ZeroMassError
        If some nu(i) is zero.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        zero = kernel.states[int(np.argmin(nu))]
        raise ZeroMassError(f"Invariant measure vanishes at state '{zero}'", state=zero)
    rows = nu[None, :] * kernel.rows.T / nu[:, None]
    return validate_kernel(rows, kernel.states)


def poisson_corrector(kernel: MarkovKernel, rho: np.ndarray, nu: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solution theta of (I - P) theta = P rho - nu(rho) with nu(theta) = 0.

    With this theta, y + S_n + theta(X_n) - n nu(rho) is a martingale. In the
    critical case (nu(rho) = 0) it is the corrector of the killed-walk
    harmonic function.
    """
    if nu is None:
        nu = stationary_distribution(kernel)
    rho = np.asarray(rho, dtype=float)
    P = kernel.rows
    d = kernel.d

    rhs = P @ rho - float(nu @ rho)
    # Replace one redundant equation by the normalization nu(theta) = 0
    system = np.eye(d) - P
    system = np.vstack([system, nu[None, :]])
    rhs = np.append(rhs, 0.0)
    theta, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return theta


def simulate_path(kernel: MarkovKernel, i: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Environment path X_0..X_n started at state index ``i``."""
    cumulative = np.cumsum(kernel.rows, axis=1)
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = i
    uniforms = rng.random(n)
    for k in range(n):
        nxt = int(np.searchsorted(cumulative[path[k]], uniforms[k], side="right"))
        path[k + 1] = min(nxt, kernel.d - 1)
    return path


def step_states(cumulative: np.ndarray, current: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """
    Vectorized environment step by inverse CDF.

    Parameters
    ----------
    cumulative : numpy.ndarray
        Row-wise cumulative sums of the kernel.
    current : numpy.ndarray
        Current state indices.
    uniforms : numpy.ndarray
        Uniform draws, one per entry of ``current``.
    """
    rows = cumulative[current]
    nxt = (uniforms[:, None] >= rows).sum(axis=1)
    return np.minimum(nxt, cumulative.shape[0] - 1)
