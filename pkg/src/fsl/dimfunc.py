"""Scale functions phi driving the pairing r = R**(1 + phi(R)).

A valid scale function has phi(x) >= 0 with both phi(x) and phi(x)*|log x|
monotone near 0.  Every built-in family depends on x only through
u = |log x|, so evaluation is done in log scale via :meth:`at_neglog`;
this keeps depths far beyond float underflow (x ~ e**-10**6) usable.

Families
--------
zero        phi(x) = 0                      (plain two-scale extremal mode)
const:c     phi(x) = c
power:t     phi(x) = 1/t - 1, t in (0, 1)   (fixed-exponent scale pairing)
loglog:C    phi(x) = C*log|log x| / |log x| (the threshold family)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DomainError, GapOverflowError

__all__ = [
    "DimensionFunction",
    "Zero",
    "Constant",
    "PowerLaw",
    "LogLog",
    "Tabulated",
    "Summability",
    "Classification",
    "MonotoneViolation",
    "classify_summability",
    "gap_levels",
    "parse_phi",
    "validate_monotone",
    "LOGLOG_VALID_BELOW",
]

# Below x0 = e**-e both C*log(u)/u and C*log(u) are monotone in u = |log x|.
LOGLOG_VALID_BELOW = math.exp(-math.e)

DEFAULT_LEVEL_CAP = 1_000_000

ArrayLike = Union[float, np.ndarray]


class Summability(Enum):
    """Behaviour of sum_k exp(-phi(e**-k) * k)."""

    CONVERGENT = "convergent"
    DIVERGENT = "divergent"


class Classification(NamedTuple):
    verdict: Summability
    heuristic: bool = False


class MonotoneViolation(NamedTuple):
    x_left: float
    x_right: float
    quantity: str  # "phi" or "phi_neglog"


class DimensionFunction:
    """Base class.  Subclasses implement `_formula` in terms of u = |log x|."""

    valid_below: float

    @property
    def label(self) -> str:
        raise NotImplementedError

    @property
    def min_neglog(self) -> float:
        """Smallest admissible u = |log x| (exclusive), from valid_below."""
        return -math.log(self.valid_below)

    @property
    def max_neglog(self) -> float:
        return math.inf

    def _formula(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def at_neglog(self, u: ArrayLike) -> ArrayLike:
        """Evaluate phi at x = exp(-u).  Accepts scalars and arrays."""
        arr = np.asarray(u, dtype=float)
        if np.any(arr <= self.min_neglog) or np.any(arr > self.max_neglog):
            raise DomainError(
                f"{self.label}: |log x| must lie in "
                f"({self.min_neglog:.6g}, {self.max_neglog:.6g}], got {u!r}"
            )
        out = self._formula(arr)
        if np.ndim(u) == 0:
            return float(out)
        return out

    def __call__(self, x: float) -> float:
        if not 0.0 < x < 1.0:
            raise DomainError(f"{self.label}: x={x} outside (0, 1)")
        if x >= self.valid_below:
            raise DomainError(
                f"{self.label}: x={x} not below validity bound {self.valid_below}"
            )
        return float(self.at_neglog(-math.log(x)))

    def monotone_check_range(self) -> tuple[float, float]:
        """Default u-interval scanned by validate_monotone (three decades)."""
        lo = max(self.min_neglog * (1.0 + 1e-9), 1e-3)
        return lo, max(lo, 1.0) * 1e3


@dataclass(frozen=True)
class Zero(DimensionFunction):
    """phi = 0: both scales free; pair with the at-least-gap estimator mode."""

    valid_below: float = 1.0

    @property
    def label(self) -> str:
        return "zero"

    def _formula(self, u):
        return np.zeros_like(u)


@dataclass(frozen=True)
class Constant(DimensionFunction):
    value: float
    valid_below: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ConfigError(f"constant scale function needs value > 0, got {self.value}")

    @property
    def label(self) -> str:
        return f"const:{self.value:g}"

    def _formula(self, u):
        return np.full_like(u, self.value)


@dataclass(frozen=True)
class PowerLaw(DimensionFunction):
    """phi = 1/theta - 1: the fixed-exponent spectrum at parameter theta."""

    theta: float
    valid_below: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"power-law parameter must be in (0, 1), got {self.theta}")

    @property
    def value(self) -> float:
        return 1.0 / self.theta - 1.0

    @property
    def label(self) -> str:
        return f"power:{self.theta:g}"

    def _formula(self, u):
        return np.full_like(u, self.value)


@dataclass(frozen=True)
class LogLog(DimensionFunction):
    """phi(x) = coeff * log|log x| / |log x|, the threshold family."""

    coeff: float
    valid_below: float = LOGLOG_VALID_BELOW

    def __post_init__(self):
        if not self.coeff > 0:
            raise ConfigError(f"loglog coefficient must be > 0, got {self.coeff}")
        # monotonicity of log(u)/u needs u >= e, i.e. x0 <= e**-e
        if not 0.0 < self.valid_below <= LOGLOG_VALID_BELOW * (1 + 1e-12):
            raise ConfigError(
                f"loglog validity bound must lie in (0, e**-e], got {self.valid_below}"
            )

    @property
    def label(self) -> str:
        return f"loglog:{self.coeff:g}"

    def _formula(self, u):
        return self.coeff * np.log(u) / u


@dataclass(frozen=True)
class Tabulated(DimensionFunction):
    """Piecewise-linear phi given on a finite grid; for validation and tests.

    Accepted by validate_monotone and (heuristically) by the summability
    classifier, but not by the analytic classification path.
    """

    xs: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.values) or len(self.xs) < 2:
            raise ConfigError("tabulated scale function needs >= 2 grid points")
        if not all(0.0 < x < 1.0 for x in self.xs):
            raise ConfigError("tabulated grid must lie in (0, 1)")
        if any(v < 0 for v in self.values):
            raise ConfigError("tabulated values must be >= 0")

    @property
    def label(self) -> str:
        return "tabulated"

    @property
    def _grid(self) -> tuple[np.ndarray, np.ndarray]:
        us = -np.log(np.asarray(self.xs, dtype=float))
        order = np.argsort(us)
        return us[order], np.asarray(self.values, dtype=float)[order]

    @property
    def valid_below(self) -> float:  # type: ignore[override]
        return float(max(self.xs))

    @property
    def min_neglog(self) -> float:
        us, _ = self._grid
        return float(np.nextafter(us[0], 0.0))

    @property
    def max_neglog(self) -> float:
        us, _ = self._grid
        return float(us[-1])

    def _formula(self, u):
        us, vals = self._grid
        return np.interp(u, us, vals)

    def monotone_check_range(self) -> tuple[float, float]:
        us, _ = self._grid
        return float(us[0]), float(us[-1])


def parse_phi(spec: str) -> DimensionFunction:
    """Parse "zero", "const:0.1", "power:0.5" or "loglog:1.0"."""
    text = spec.strip().lower()
    if text == "zero":
        return Zero()
    name, sep, arg = text.partition(":")
    if not sep:
        raise ConfigError(f"cannot parse scale function spec {spec!r}")
    try:
        value = float(arg)
    except ValueError:
        raise ConfigError(f"bad numeric argument in scale function spec {spec!r}") from None
    if name in ("const", "constant"):
        return Constant(value)
    if name in ("power", "pow"):
        return PowerLaw(value)
    if name == "loglog":
        return LogLog(value)
    raise ConfigError(f"unknown scale function family {name!r} in {spec!r}")


def gap_levels(
    phi: DimensionFunction,
    k: int,
    base: float,
    level_cap: int = DEFAULT_LEVEL_CAP,
) -> int:
    """Number of symbolic levels between R = base**-k and r = R**(1+phi(R)).

    Returns max(1, ceil(phi(base**-k) * k)); the floor of 1 keeps r < R
    strict at the level of integer depths.
    """
    if k < 1:
        raise DomainError(f"level k must be >= 1, got {k}")
    if base <= 1.0:
        raise DomainError(f"metric base must be > 1, got {base}")
    u = k * math.log(base)
    gap = max(1, math.ceil(phi.at_neglog(u) * k))
    if gap > level_cap:
        raise GapOverflowError(f"gap {gap} exceeds level cap {level_cap}")
    return gap


def classify_summability(phi: DimensionFunction) -> Classification:
    """Classify sum_k exp(-phi(e**-k)*k) as convergent or divergent.

    Built-in families are classified analytically: constants and power laws
    give geometric terms, the zero function gives constant terms, and the
    log-log family gives k**-C (divergent exactly when C <= 1).  Tabulated
    functions fall back to a partial-sum trend over their grid and are
    flagged heuristic.
    """
    if isinstance(phi, Zero):
        return Classification(Summability.DIVERGENT)
    if isinstance(phi, (Constant, PowerLaw)):
        return Classification(Summability.CONVERGENT)
    if isinstance(phi, LogLog):
        verdict = Summability.DIVERGENT if phi.coeff <= 1.0 else Summability.CONVERGENT
        return Classification(verdict)
    if isinstance(phi, Tabulated):
        return Classification(_partial_sum_trend(phi), heuristic=True)
    raise TypeError(f"cannot classify {type(phi).__name__}")


def _partial_sum_trend(phi: DimensionFunction) -> Summability:
    # Coarse rule on the available domain: call the series convergent when
    # the second half of the partial sum contributes less than half of the
    # first half (geometric-style decay).
    k_lo = max(2, math.floor(phi.min_neglog) + 1)
    k_hi = math.floor(min(phi.max_neglog, 1e6))
    if k_hi - k_lo < 3:
        raise DomainError("tabulated domain too short for the summability heuristic")
    ks = np.arange(k_lo, k_hi + 1, dtype=float)
    terms = np.exp(-np.asarray(phi.at_neglog(ks)) * ks)
    half = len(terms) // 2
    head, tail = float(terms[:half].sum()), float(terms[half:].sum())
    if tail <= 0.5 * head:
        return Summability.CONVERGENT
    return Summability.DIVERGENT


def validate_monotone(
    phi: DimensionFunction, grid_points: int = 257
) -> Optional[MonotoneViolation]:
    """Check that phi(x) and phi(x)*|log x| are monotone on a geometric grid.

    Returns None when both sequences are monotone, otherwise the first
    adjacent grid pair (in x) that breaks the trend.
    """
    if grid_points < 2:
        raise DomainError(f"grid_points must be >= 2, got {grid_points}")
    u_lo, u_hi = phi.monotone_check_range()
    us = np.linspace(u_lo, u_hi, grid_points)
    vals = np.asarray(phi.at_neglog(us), dtype=float)
    for series, name in ((vals, "phi"), (vals * us, "phi_neglog")):
        bad = _first_trend_break(series)
        if bad is not None:
            i = bad
            return MonotoneViolation(
                x_left=math.exp(-us[i]), x_right=math.exp(-us[i + 1]), quantity=name
            )
    return None


def _first_trend_break(series: np.ndarray) -> Optional[int]:
    diffs = np.diff(series)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(series))))
    if np.all(diffs >= -tol) or np.all(diffs <= tol):
        return None
    # direction from the overall trend, then report the first offender
    if series[-1] >= series[0]:
        idx = np.nonzero(diffs < -tol)[0]
    else:
        idx = np.nonzero(diffs > tol)[0]
    return int(idx[0])
