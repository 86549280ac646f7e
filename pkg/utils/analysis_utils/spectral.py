"""
Spectral analysis of the environment.

Transfer matrix P_lam(i,j) = P(i,j) e^{lam rho(j)}, its Perron root k(lam),
criticality classification through k'(0) = nu(rho), the asymptotic
variance sigma^2 of the walk and the Fourier (non-lattice) diagnostic.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import SpectralMismatch
from utils.model_utils.environment import mixing_decay, primitivity_index
from utils.model_utils.offspring import geometric, moments, poisson
from utils.model_utils.simulate import EnvironmentModel, build_environment

log = logging.getLogger(__name__)

CRITICAL_DEADBAND = 1e-10
PERRON_TOL = 1e-13
PERRON_MAX_ITER = 1_000_000
DIFF_STEP = 1e-5
DIFF_TOL = 1e-8
SIGMA2_TAIL_TOL = 1e-12
SIGMA2_MAX_TERMS = 100_000
NONLATTICE_MARGIN = 1e-9
DEFAULT_T_GRID = np.geomspace(1e-3, 50.0, 200)


def transfer_matrix(env: EnvironmentModel, lam: float) -> np.ndarray:
    """M(i,j) = P(i,j) e^{lam rho(j)}."""
    return env.kernel.rows * np.exp(lam * np.asarray(env.rho_vec))[None, :]


def perron_root(matrix: np.ndarray, tol: float = PERRON_TOL, max_iter: int = PERRON_MAX_ITER) -> float:
    """
    Perron root of a nonnegative primitive matrix by power iteration.

    Iterates v <- Mv and stops when the Collatz-Wielandt bounds
    min(Mv/v) <= r <= max(Mv/v) agree to relative ``tol``, or when the gap
    stops shrinking (rounding floor).
    """
    v = np.ones(matrix.shape[0])
    best_gap, stalled = np.inf, 0
    lo = hi = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        ratios = w / v
        lo, hi = ratios.min(), ratios.max()
        gap = hi - lo
        if gap <= tol * hi:
            break
        if gap < best_gap:
            best_gap, stalled = gap, 0
        else:
            stalled += 1
            if stalled >= 100:
                break
        v = w / w.max()
    return float(0.5 * (lo + hi))


def k(env: EnvironmentModel, lam: float, tol: float = PERRON_TOL) -> float:
    """
    Spectral radius k(lam) of the transfer matrix.

    Examples
    --------
    Two-state i.i.d. environment with rho = (ln 2, -ln 2): k(1) = 1.25.
    """
    return perron_root(transfer_matrix(env, lam), tol=tol)


def k_curve(env: EnvironmentModel, lambdas: Sequence[float]) -> pd.DataFrame:
    """Table of lam, k(lam), ln k(lam)."""
    values = np.array([k(env, lam) for lam in lambdas])
    return pd.DataFrame({"lambda": np.asarray(lambdas, dtype=float), "k": values, "log_k": np.log(values)})


def k_prime0(env: EnvironmentModel, h: float = DIFF_STEP, tol: float = DIFF_TOL) -> float:
    """
    k'(0) = nu(rho), cross-checked against (k(h) - k(-h)) / (2h).

    Raises
    ------
    SpectralMismatch
        If the exact value and the central difference differ by more than tol.
    """
    exact = float(env.nu @ np.asarray(env.rho_vec))
    numeric = (k(env, h, tol=4e-15) - k(env, -h, tol=4e-15)) / (2.0 * h)
    if abs(exact - numeric) > tol:
        raise SpectralMismatch(
            f"k'(0): nu(rho) = {exact!r} but central difference gives {numeric!r}",
            exact=exact,
            numeric=numeric,
        )
    return exact


def classify(k_prime: float, deadband: float = CRITICAL_DEADBAND) -> str:
    if abs(k_prime) <= deadband:
        return "critical"
    return "supercritical" if k_prime > 0 else "subcritical"


def fit_geometric_envelope(deltas: np.ndarray, start: int = 1, floor: float = 1e-15) -> Tuple[float, float]:
    """
    Fit delta_n <= C r^n on the significant part of a decay sequence.

    ``deltas[n-1]`` is delta_n. Entries below ``floor`` are treated as zero.
    Returns ``(0.0, 0.0)`` when nothing is significant.

    Returns
    -------
    tuple of float
        ``(C, r)``; C is the smallest constant making the bound hold on every
        fitted point.
    """
    deltas = np.asarray(deltas, dtype=float)
    n = np.arange(1, deltas.size + 1)
    mask = (n >= start) & (deltas > floor)
    if not mask.any():
        return 0.0, 0.0
    if mask.sum() == 1:
        return float(deltas[mask][0]), 0.0

    slope, _ = np.polyfit(n[mask], np.log(deltas[mask]), 1)
    r = float(np.exp(slope))
    if r >= 1.0:
        return float(deltas[mask].max()), 1.0
    C = float(np.max(deltas[mask] / r ** n[mask]))
    return C, r


def sigma2(
    env: EnvironmentModel,
    tail_tol: float = SIGMA2_TAIL_TOL,
    max_terms: int = SIGMA2_MAX_TERMS,
    mixing_steps: int = 64,
) -> float:
    """
    Asymptotic variance of the walk.

    sigma^2 = nu(rho^2) - nu(rho)^2 + 2 sum_{n>=1} [nu(rho P^n rho) - nu(rho)^2],
    truncated at the first N whose geometric tail bound (from the fitted
    mixing envelope) is below ``tail_tol``, with N <= ``max_terms``.

    Raises
    ------
    SpectralMismatch
        If the truncated series is below -1e-10.
    """
    nu = env.nu
    r = np.asarray(env.rho_vec, dtype=float)
    P = env.kernel.rows
    d = env.d

    mean = float(nu @ r)
    centered = r - mean
    base = float(nu @ (r * r)) - mean**2

    start = primitivity_index(env.kernel)
    deltas = mixing_decay(env.kernel, nu, max(mixing_steps, 2 * start))
    C, rate = fit_geometric_envelope(deltas, start=start)
    significant = np.nonzero(deltas > 1e-15)[0]
    last_significant = int(significant[-1]) + 1 if significant.size else 0

    scale = 2.0 * d * np.abs(r).max() * np.abs(centered).max()
    if C == 0.0 or scale == 0.0:
        N = last_significant
    elif rate >= 1.0:
        N = max_terms
    elif rate == 0.0:
        N = last_significant
    else:
        ratio = tail_tol * (1.0 - rate) / (scale * C)
        N = int(np.ceil(np.log(ratio) / np.log(rate))) if ratio < 1.0 else 0
        N = max(N, last_significant)
    N = min(max(N, 0), max_terms)

    correction = 0.0
    g = centered.copy()
    for _ in range(N):
        g = P @ g
        correction += float(nu @ (r * g))

    value = base + 2.0 * correction
    log.debug("sigma2: %d series terms, envelope C=%.3g r=%.4g, value %.12g", N, C, rate, value)
    if value < 0.0:
        if value < -1e-10:
            raise SpectralMismatch(f"Truncated variance series is negative: {value!r}")
        value = 0.0
    return value


def spectral_radius(matrix: np.ndarray, squarings: int = 48) -> float:
    """
    Spectral radius of a complex matrix through the Gelfand limit.

    Power iteration on the matrix itself by repeated squaring: the modulus
    of ||M^(2^m)|| is tracked in log scale and the estimate is
    ||M^(2^m)||^(2^-m).
    """
    A = np.asarray(matrix, dtype=complex)
    norm = np.abs(A).max()
    if norm == 0.0:
        return 0.0
    A = A / norm
    log_norm = np.log(norm)
    for m in range(1, squarings + 1):
        A = A @ A
        norm = np.abs(A).max()
        if norm == 0.0:
            return 0.0
        A /= norm
        log_norm = 2.0 * log_norm + np.log(norm)
    return float(np.exp(log_norm / 2.0**squarings))


@dataclass(frozen=True)
class NonlatticeVerdict:
    nonlattice: bool
    min_margin: float
    t_grid: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.t_grid, "radius": self.radii, "margin": 1.0 - self.radii})


def nonlattice_check(env: EnvironmentModel, t_grid: Optional[Sequence[float]] = None) -> NonlatticeVerdict:
    """
    Operator criterion for the non-lattice condition on a grid of t != 0.

    The verdict is true iff the spectral radius of P(i,j) e^{i t rho(j)} is at
    most 1 - 1e-9 at every grid point.
    """
    grid = np.asarray(DEFAULT_T_GRID if t_grid is None else t_grid, dtype=float)
    if np.any(grid == 0.0):
        raise ValueError("t_grid must not contain 0")
    rho_vec = np.asarray(env.rho_vec)
    radii = np.array(
        [spectral_radius(env.kernel.rows * np.exp(1j * t * rho_vec)[None, :]) for t in grid]
    )
    margin = float((1.0 - radii).min())
    return NonlatticeVerdict(
        nonlattice=bool(margin >= NONLATTICE_MARGIN), min_margin=margin, t_grid=grid, radii=radii
    )


# -------------------------------------------------------------------------
## Aggregated report


@dataclass(frozen=True)
class SpectralReport:
    states: Tuple[str, ...]
    nu: np.ndarray
    rho_vec: np.ndarray
    k_prime0: float
    sigma2: float
    classification: str
    nonlattice: NonlatticeVerdict
    primitivity: int

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "nu": self.nu.tolist(),
            "rho": np.asarray(self.rho_vec).tolist(),
            "k_prime0": self.k_prime0,
            "sigma2": self.sigma2,
            "classification": self.classification,
            "nonlattice": self.nonlattice.nonlattice,
            "nonlattice_min_margin": self.nonlattice.min_margin,
            "nonlattice_t_min": float(self.nonlattice.t_grid.min()),
            "nonlattice_t_max": float(self.nonlattice.t_grid.max()),
            "nonlattice_t_points": int(self.nonlattice.t_grid.size),
            "primitivity_index": self.primitivity,
        }

    def to_frame(self) -> pd.DataFrame:
        """One row per state."""
        return pd.DataFrame({"state": list(self.states), "nu": self.nu, "rho": np.asarray(self.rho_vec)})


def analyze(
    env: EnvironmentModel,
    t_grid: Optional[Sequence[float]] = None,
    tail_tol: float = SIGMA2_TAIL_TOL,
) -> SpectralReport:
    """
    Run the full spectral analysis of an environment.

    Returns
    -------
    SpectralReport
        nu, rho, k'(0), sigma^2, classification and the non-lattice verdict.
    """
    primitivity = primitivity_index(env.kernel)
    k0 = k_prime0(env)
    var = sigma2(env, tail_tol=tail_tol)
    verdict = nonlattice_check(env, t_grid)
    if verdict.nonlattice and var <= 0.0:
        log.warning("Non-lattice verdict with sigma^2 = %g; check the t-grid", var)

    report = SpectralReport(
        states=env.states,
        nu=np.asarray(env.nu),
        rho_vec=np.asarray(env.rho_vec),
        k_prime0=k0,
        sigma2=var,
        classification=classify(k0),
        nonlattice=verdict,
        primitivity=primitivity,
    )
    log.info(
        "✓ Spectral analysis: %s, k'(0)=%.3e, sigma2=%.6g, nonlattice=%s",
        report.classification, k0, var, verdict.nonlattice,
    )
    return report


def calibrate(env: EnvironmentModel, state) -> EnvironmentModel:
    """
    Rescale the offspring mean of one state so that nu(rho) = 0 exactly.

    Only parametric families (Geometric, Poisson) can be rescaled.

    Raises
    ------
    ValueError
        If the chosen state has an Explicit law.
    """
    c = env.state_index(state)
    nu = env.nu
    r = np.asarray(env.rho_vec, dtype=float)
    others = float(nu @ r - nu[c] * r[c])
    target_mean = float(np.exp(-others / nu[c]))

    law = env.laws[c]
    if law.family == "geometric":
        new_law = geometric(target_mean / (1.0 + target_mean))
    elif law.family == "poisson":
        new_law = poisson(target_mean)
    else:
        raise ValueError(
            f"State '{env.states[c]}' has an explicit law; calibration needs a Geometric or Poisson state"
        )

    laws = list(env.laws)
    laws[c] = new_law
    log.info(
        "Calibrated state '%s': mean %.6g -> %.6g", env.states[c], moments(law).mean, target_mean
    )
    return build_environment(env.kernel, laws)
