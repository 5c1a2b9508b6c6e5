"""Large-deviation tools for bounded discrete random variables.

Provides the moment generating function M(theta) = E exp(theta*X), its
Legendre transform I(a) = sup_theta (theta*a - log M(theta)), the matching
Chernoff tail bounds for i.i.d. sums, and a Monte Carlo tail estimator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError

__all__ = [
    "BoundedDiscreteRV",
    "RateFunction",
    "centered",
    "chernoff_interval",
    "empirical_tail",
    "mgf",
    "rate",
]

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class BoundedDiscreteRV:
    """Finite-atom random variable given as ((value, prob), ...).

    Atoms are sorted by value and duplicate values are merged on
    construction.  Probabilities must be positive and sum to 1 within 1e-12.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise DomainError("need at least one atom")
        merged: dict[float, float] = {}
        for value, prob in self.atoms:
            if not math.isfinite(value):
                raise DomainError(f"atom value {value} is not finite")
            if not prob > 0:
                raise DomainError(f"atom probability must be > 0, got {prob}")
            merged[float(value)] = merged.get(float(value), 0.0) + float(prob)
        total = math.fsum(merged.values())
        if abs(total - 1.0) > _PROB_TOL:
            raise DomainError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(
            self, "atoms", tuple(sorted((v, p) for v, p in merged.items()))
        )

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.atoms)

    @property
    def ess_inf(self) -> float:
        return self.atoms[0][0]

    @property
    def ess_sup(self) -> float:
        return self.atoms[-1][0]

    def prob_of(self, value: float) -> float:
        for v, p in self.atoms:
            if v == value:
                return p
        return 0.0


def mgf(rv: BoundedDiscreteRV, theta: float) -> float:
    """M(theta) = sum_i p_i * exp(theta * v_i)."""
    with np.errstate(over="ignore"):
        return float(np.sum(rv.probs * np.exp(theta * rv.values)))


def _log_mgf(rv: BoundedDiscreteRV, theta: float) -> float:
    a = theta * rv.values + np.log(rv.probs)
    peak = float(np.max(a))
    return peak + math.log(float(np.sum(np.exp(a - peak))))


def _tilted_moments(rv: BoundedDiscreteRV, theta: float) -> tuple[float, float]:
    """Mean and variance of the exponentially tilted distribution.

    These are the first two derivatives of log M at theta.
    """
    a = theta * rv.values + np.log(rv.probs)
    w = np.exp(a - np.max(a))
    w /= w.sum()
    m1 = float(np.sum(w * rv.values))
    m2 = float(np.sum(w * (rv.values - m1) ** 2))
    return m1, m2


def rate(rv: BoundedDiscreteRV, a: float, tol: float = 1e-10) -> float:
    """Legendre transform I(a) = sup_theta (theta*a - log M(theta)).

    Outside [ess_inf, ess_sup] the supremum is +inf, which is returned as a
    value rather than raised.  At the endpoints I(a) = -log P(X = a); at the
    mean I(a) = 0.  Interior values are found by Newton iteration on the
    strictly concave objective, with a bisection fallback.
    """
    if a == rv.mean:
        return 0.0
    if a > rv.ess_sup or a < rv.ess_inf:
        return math.inf
    if a == rv.ess_sup:
        return -math.log(rv.prob_of(rv.ess_sup))
    if a == rv.ess_inf:
        return -math.log(rv.prob_of(rv.ess_inf))
    theta = _solve_tilt(rv, a, tol)
    return theta * a - _log_mgf(rv, theta)


def _solve_tilt(rv: BoundedDiscreteRV, a: float, tol: float) -> float:
    """Solve K'(theta) = a for the tilt theta (K = log M, K' increasing)."""
    scale = max(1.0, abs(a), rv.ess_sup - rv.ess_inf)
    theta = 0.0
    for _ in range(100):
        m1, m2 = _tilted_moments(rv, theta)
        if abs(m1 - a) <= tol * scale:
            return theta
        if m2 <= 0.0:
            break
        step = (a - m1) / m2
        theta += step
        if abs(step) <= tol * max(1.0, abs(theta)):
            m1, _ = _tilted_moments(rv, theta)
            if abs(m1 - a) <= tol * scale:
                return theta
    # bisection fallback on an expanding bracket
    lo, hi = -1.0, 1.0
    for _ in range(200):
        if _tilted_moments(rv, lo)[0] < a:
            break
        lo *= 2.0
    for _ in range(200):
        if _tilted_moments(rv, hi)[0] > a:
            break
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _tilted_moments(rv, mid)[0] < a:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


class RateFunction:
    """I(x) for a fixed rv with per-instance memoisation.

    The cache is a plain dict: keep each instance confined to one worker.
    """

    def __init__(self, rv: BoundedDiscreteRV):
        self.rv = rv
        self._cache: dict[float, float] = {}

    def __call__(self, a: float) -> float:
        key = float(a)
        if key not in self._cache:
            self._cache[key] = rate(self.rv, key)
        return self._cache[key]


class ChernoffInterval(NamedTuple):
    lower: float
    upper: float


def chernoff_interval(
    rv: BoundedDiscreteRV, a: float, n: int, delta: float
) -> ChernoffInterval:
    """Two-sided exponential envelope for P(S_n >= a*n).

    Returns (exp(-(I(a)+delta)*n), exp(-(I(a)-delta)*n)); the bounds hold for
    all large n once delta > 0, and the delta = 0 pair is the shared
    exponential profile exp(-n*I(a)).
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    if not rv.mean < a < rv.ess_sup:
        raise DomainError(f"a={a} must lie in (mean, ess_sup)")
    i_a = rate(rv, a)
    return ChernoffInterval(
        lower=math.exp(-(i_a + delta) * n), upper=math.exp(-(i_a - delta) * n)
    )


def empirical_tail(
    rv: BoundedDiscreteRV, a: float, n: int, trials: int, seed: int
) -> float:
    """Monte Carlo estimate of P(S_n >= a*n) for S_n a sum of n i.i.d. draws."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, rv.probs, size=trials)
    sums = counts @ rv.values
    return float(np.mean(sums >= a * n))


def centered(rv: BoundedDiscreteRV) -> BoundedDiscreteRV:
    """Shift all atoms by -mean; the result has mean 0 within 1e-12."""
    mu = rv.mean
    return BoundedDiscreteRV(tuple((v - mu, p) for v, p in rv.atoms))
