"""
Per-state offspring laws and their generating-function calculus.

Supported families are Geometric(p) with P(xi = k) = (1 - p) p^k, Poisson(lam)
and Explicit(pmf over 0..K). Besides f(s) the module works with the
complement g(t) = 1 - f(1 - t), which keeps full relative precision when
the argument is close to 1.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple, Union

import numpy as np

from utils.errors import (
    Condition2Violated,
    Condition4Violated,
    DomainError,
    PhiOutOfRange,
    PopulationOverflow,
)

log = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

FAMILIES = ("geometric", "poisson", "explicit")

# Removable singularities of phi and psi are replaced by their limits here
EPS_SWITCH = 1e-7

# Largest population handled exactly; beyond it trajectories are censored
MAX_POPULATION = 2**53
# Guard for the expected total passed to the samplers
MAX_EXPECTED_TOTAL = 1e18

PMF_TOL = 1e-12


class Moments(NamedTuple):
    mean: float
    second_factorial: float
    p_ge2: float


@dataclass(frozen=True)
class OffspringLaw:
    """
    Offspring distribution of one environment state.

    Use the ``geometric``, ``poisson`` and ``explicit`` constructors rather
    than building instances by hand.
    """

    family: str
    p: float = float("nan")
    lam: float = float("nan")
    pmf: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"Unknown offspring family '{self.family}'. Expected one of {FAMILIES}")
        if self.family == "geometric" and not 0.0 <= self.p < 1.0:
            raise ValueError(f"Geometric parameter p must lie in [0, 1), got {self.p}")
        if self.family == "poisson" and not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"Poisson rate must be finite and nonnegative, got {self.lam}")
        if self.family == "explicit":
            pmf = np.asarray(self.pmf, dtype=float)
            if pmf.size == 0 or np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
                raise ValueError(f"Explicit pmf must be a nonempty nonnegative vector, got {self.pmf}")
            if abs(pmf.sum() - 1.0) > PMF_TOL:
                raise ValueError(f"Explicit pmf sums to {pmf.sum()!r}, expected 1")

    def describe(self) -> str:
        if self.family == "geometric":
            return f"Geometric(p={self.p:g})"
        if self.family == "poisson":
            return f"Poisson(lam={self.lam:g})"
        return f"Explicit(K={len(self.pmf) - 1})"

    def to_dict(self) -> dict:
        if self.family == "geometric":
            return {"family": "geometric", "p": self.p}
        if self.family == "poisson":
            return {"family": "poisson", "lam": self.lam}
        return {"family": "explicit", "pmf": list(self.pmf)}


def geometric(p: float) -> OffspringLaw:
    return OffspringLaw(family="geometric", p=float(p))


def poisson(lam: float) -> OffspringLaw:
    return OffspringLaw(family="poisson", lam=float(lam))


def explicit(pmf) -> OffspringLaw:
    """Explicit law from a sequence (index = count) or a {count: prob} mapping."""
    if isinstance(pmf, dict):
        size = max(int(k) for k in pmf) + 1
        dense = [0.0] * size
        for k, prob in pmf.items():
            dense[int(k)] = float(prob)
        pmf = dense
    return OffspringLaw(family="explicit", pmf=tuple(float(x) for x in pmf))


def law_from_dict(params: dict) -> OffspringLaw:
    """Build a law from its config form, e.g. ``{"family": "poisson", "lam": 1.0}``."""
    family = str(params.get("family", "")).lower()
    if family == "geometric":
        return geometric(params["p"])
    if family == "poisson":
        return poisson(params["lam"])
    if family == "explicit":
        return explicit(params["pmf"])
    raise ValueError(f"Unknown offspring family '{params.get('family')}'. Expected one of {FAMILIES}")


# -------------------------------------------------------------------------
## Generating functions


def _check_unit(values: ArrayLike, name: str = "s") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {values}")
    return arr


def _as_output(arr: np.ndarray, like: ArrayLike):
    return float(arr) if np.ndim(like) == 0 else arr


def pgf(law: OffspringLaw, s: ArrayLike):
    """
    Probability generating function f(s) = E[s^xi].

    Parameters
    ----------
    law : OffspringLaw
    s : float or numpy.ndarray
        Argument(s) in [0, 1].

    Returns
    -------
    float or numpy.ndarray
        Values in [0, 1].

    Raises
    ------
    DomainError
        If any argument is outside [0, 1].

    Examples
    --------
    >>> pgf(geometric(0.5), 0.0)
    0.5
    """
    arr = _check_unit(s)
    if law.family == "geometric":
        out = (1.0 - law.p) / (1.0 - law.p * arr)
    elif law.family == "poisson":
        out = np.exp(law.lam * (arr - 1.0))
    else:
        out = np.polynomial.polynomial.polyval(arr, np.asarray(law.pmf))
    return _as_output(np.clip(out, 0.0, 1.0), s)


def pgf_complement(law: OffspringLaw, t: ArrayLike):
    """
    Complement g(t) = 1 - f(1 - t), accurate for small t.

    Composing complements right to left gives 1 - f_1 o ... o f_n (s)
    without cancellation.
    """
    arr = np.asarray(t, dtype=float)
    if law.family == "geometric":
        out = law.p * arr / (1.0 - law.p + law.p * arr)
    elif law.family == "poisson":
        out = -np.expm1(-law.lam * arr)
    else:
        pmf = np.asarray(law.pmf)
        ks = np.arange(1, pmf.size)
        with np.errstate(divide="ignore"):
            log_base = np.log1p(-np.multiply.outer(arr, np.ones_like(ks, dtype=float)))
        terms = -np.expm1(ks * log_base)
        out = terms @ pmf[1:] if ks.size else np.zeros_like(arr)
    return _as_output(np.asarray(out, dtype=float), t)


def moments(law: OffspringLaw) -> Moments:
    """
    Mean f'(1), second factorial moment f''(1) and P(xi >= 2).

    Raises
    ------
    Condition2Violated
        If the mean is not in (0, inf).
    Condition4Violated
        If P(xi >= 2) = 0.
    """
    if law.family == "geometric":
        p = law.p
        mean = p / (1.0 - p)
        second = 2.0 * p * p / (1.0 - p) ** 2
        p_ge2 = p * p
    elif law.family == "poisson":
        lam = law.lam
        mean = lam
        second = lam * lam
        p_ge2 = -np.expm1(-lam) - lam * np.exp(-lam)
    else:
        pmf = np.asarray(law.pmf)
        ks = np.arange(pmf.size)
        mean = float(ks @ pmf)
        second = float((ks * (ks - 1)) @ pmf)
        p_ge2 = float(pmf[2:].sum())

    if not (np.isfinite(mean) and mean > 0.0) or not np.isfinite(second):
        raise Condition2Violated(
            f"{law.describe()} has mean {mean!r}; offspring mean must lie in (0, inf)"
        )
    if p_ge2 <= 0.0:
        raise Condition4Violated(f"{law.describe()} has P(xi >= 2) = 0")
    return Moments(float(mean), float(second), float(p_ge2))


def rho(law: OffspringLaw) -> float:
    """Log-mean ln f'(1)."""
    if law.family == "poisson":
        moments(law)
        return float(np.log(law.lam))
    if law.family == "geometric":
        moments(law)
        return float(np.log(law.p) - np.log1p(-law.p))
    return float(np.log(moments(law).mean))


def phi_limit(law: OffspringLaw) -> float:
    """Value of phi at s = 1: f''(1) / (2 f'(1)^2)."""
    m = moments(law)
    return m.second_factorial / (2.0 * m.mean**2)


def phi_complement(law: OffspringLaw, t: ArrayLike):
    """phi evaluated at s = 1 - t."""
    arr = np.asarray(t, dtype=float)
    mean = moments(law).mean
    limit = phi_limit(law)
    safe = np.where(arr > EPS_SWITCH, arr, 1.0)
    formula = 1.0 / pgf_complement(law, safe) - 1.0 / (mean * safe)
    out = np.where(arr > EPS_SWITCH, formula, limit)
    return _as_output(np.asarray(out, dtype=float), t)


def phi(law: OffspringLaw, s: ArrayLike):
    """
    phi(s) = 1/(1 - f(s)) - 1/(f'(1)(1 - s)), continuous at s = 1.

    For s >= 1 - 1e-7 the limit f''(1)/(2 f'(1)^2) is returned.

    Raises
    ------
    PhiOutOfRange
        If a value leaves ``phi_window(law)``.

    Examples
    --------
    >>> phi(poisson(1.0), 1.0)
    0.5
    """
    arr = _check_unit(s)
    values = np.asarray(phi_complement(law, 1.0 - arr))
    low, high = phi_window(law)
    slack = 1e-6 * high
    if np.any(values < low - slack) or np.any(values > high + slack):
        raise PhiOutOfRange(
            f"phi of {law.describe()} left [{low:.6g}, {high:.6g}]: "
            f"min {values.min():.6g}, max {values.max():.6g}",
            low=low,
            high=high,
        )
    return _as_output(values, s)


def phi_window(law: OffspringLaw) -> Tuple[float, float]:
    """Bounds phi(0)/2 <= phi(s) <= 2 phi(1) valid for every s in [0, 1]."""
    return 0.5 * float(phi_complement(law, 1.0)), 2.0 * phi_limit(law)


def psi_complement(z: int, t: ArrayLike):
    """psi_z evaluated at s = 1 - t."""
    z = int(z)
    if z < 1:
        raise DomainError(f"z must be a positive integer, got {z}")
    arr = np.asarray(t, dtype=float)
    if z == 1:
        return _as_output(np.zeros_like(arr), t)
    limit = 0.5 * (z - 1) / z
    safe = np.where(arr > EPS_SWITCH, arr, 1.0)
    with np.errstate(divide="ignore"):
        one_minus_power = -np.expm1(z * np.log1p(-safe))
    formula = 1.0 / one_minus_power - 1.0 / (z * safe)
    out = np.where(arr > EPS_SWITCH, formula, limit)
    return _as_output(np.asarray(out, dtype=float), t)


def psi(z: int, s: ArrayLike):
    """
    psi_z(s) = 1/(1 - s^z) - 1/(z(1 - s)), identically 0 for z = 1.

    For s >= 1 - 1e-7 the limit (z - 1)/(2z) is returned.
    """
    arr = _check_unit(s)
    return _as_output(np.asarray(psi_complement(z, 1.0 - arr)), s)


def power_complement(z: int, t: ArrayLike):
    """1 - (1 - t)^z with full relative precision."""
    arr = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        out = -np.expm1(z * np.log1p(-arr))
    return _as_output(np.asarray(out, dtype=float), t)


# -------------------------------------------------------------------------
## Sampling


def sample_totals(law: OffspringLaw, z: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Total offspring of ``z[r]`` parents for every entry, in one vectorized draw.

    Uses closed-form convolutions: negative binomial for Geometric,
    Poisson(z lam) for Poisson and a multinomial count vector for Explicit.

    Parameters
    ----------
    law : OffspringLaw
    z : numpy.ndarray
        Nonnegative parent counts (int64).
    rng : numpy.random.Generator
        Offspring stream.

    Returns
    -------
    totals : numpy.ndarray
        int64 totals; censored entries hold ``MAX_POPULATION``.
    censored : numpy.ndarray
        Boolean mask of entries that exceeded the representable range.
    """
    z = np.asarray(z, dtype=np.int64)
    totals = np.zeros_like(z)
    censored = np.zeros(z.shape, dtype=bool)

    mean = moments(law).mean
    active = z > 0
    too_big = active & (z.astype(float) * mean > MAX_EXPECTED_TOTAL)
    censored |= too_big
    active &= ~too_big

    if np.any(active):
        parents = z[active]
        if law.family == "geometric":
            draws = rng.negative_binomial(parents, 1.0 - law.p)
        elif law.family == "poisson":
            draws = rng.poisson(parents.astype(float) * law.lam)
        else:
            counts = rng.multinomial(parents, np.asarray(law.pmf))
            draws = counts @ np.arange(len(law.pmf), dtype=np.int64)
        totals[active] = draws

    censored |= totals > MAX_POPULATION
    totals[censored] = MAX_POPULATION
    return totals, censored


def _sample_individuals(law: OffspringLaw, z: int, rng: np.random.Generator) -> int:
    if law.family == "geometric":
        return int((rng.geometric(1.0 - law.p, size=z) - 1).sum())
    if law.family == "poisson":
        return int(rng.poisson(law.lam, size=z).sum())
    return int(rng.choice(len(law.pmf), size=z, p=np.asarray(law.pmf)).sum())


def sample_total(law: OffspringLaw, z: int, rng: np.random.Generator, per_individual: bool = False) -> int:
    """
    Sum of ``z`` i.i.d. offspring counts.

    Parameters
    ----------
    law : OffspringLaw
    z : int
        Number of parents, z >= 0. The empty sum is 0.
    rng : numpy.random.Generator
    per_individual : bool, optional
        Draw every individual separately instead of using the closed-form
        convolution (validation mode, small z only).

    Raises
    ------
    PopulationOverflow
        If the total exceeds the representable population range.
    """
    z = int(z)
    if z < 0:
        raise ValueError(f"Population must be nonnegative, got {z}")
    if z == 0:
        return 0
    if per_individual:
        total = _sample_individuals(law, z, rng)
        if total > MAX_POPULATION:
            raise PopulationOverflow(f"Offspring total {total} exceeds {MAX_POPULATION}")
        return total

    totals, censored = sample_totals(law, np.array([z], dtype=np.int64), rng)
    if censored[0]:
        raise PopulationOverflow(
            f"Offspring total of {z} parents under {law.describe()} exceeds {MAX_POPULATION}"
        )
    return int(totals[0])
