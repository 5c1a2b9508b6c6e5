"""One-variable random grid carpets (self-affine, m columns by n rows, m < n).

A template selects cells from an m-by-n grid; the per-template statistics are
N (selected cells), B (non-empty columns) and C (the fullest column).  Cell
rectangles shrink by 1/m horizontally and 1/n vertically per level, so scales
are tracked with two stopping times: the level where base length reaches R
and the level where height reaches R.  Covering numbers at paired scales are
products of C over the height window times products of B over the base
window.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dimfunc import DimensionFunction, Summability, classify_summability
from .errors import (
    AffinityBandError,
    DomainError,
    NoAdmissiblePairError,
    OutOfDepthError,
    TemplateError,
)

__all__ = [
    "CarpetTemplate",
    "CarpetFamily",
    "CarpetCoding",
    "CarpetWitness",
    "TwoBlockEvent",
    "assouad_dim",
    "assouad_spectrum",
    "box_dim",
    "covering_estimate",
    "derive_stats",
    "detect_two_block_runs",
    "k1_k2",
    "phi_assouad_estimate",
    "quasi_assouad",
    "sample_carpet_coding",
]

_PROB_TOL = 1e-12
MAX_SUBDIVISION = 10_000


@dataclass(frozen=True)
class CarpetTemplate:
    """Cell selection from an m-by-n grid, given as (column, row) pairs.

    Grid alignment makes the selected rectangles non-overlapping, so only
    structural validity is checked: cells distinct and inside the grid, and
    m < n strictly (equal subdivisions would be the self-similar square
    case, which has no base/height scale separation).
    """

    m: int
    n: int
    cells: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.m < 2:
            raise TemplateError(f"need at least 2 columns, got m={self.m}")
        if self.n <= self.m:
            raise TemplateError(f"need n > m strictly, got m={self.m}, n={self.n}")
        if self.n > MAX_SUBDIVISION:
            raise TemplateError(f"n={self.n} exceeds the subdivision bound {MAX_SUBDIVISION}")
        cells = tuple((int(a), int(b)) for a, b in self.cells)
        if not cells:
            raise TemplateError("template needs at least one cell")
        if len(set(cells)) != len(cells):
            raise TemplateError("duplicate cell in template")
        for a, b in cells:
            if not (0 <= a < self.m and 0 <= b < self.n):
                raise TemplateError(f"cell ({a}, {b}) outside the {self.m}x{self.n} grid")
        object.__setattr__(self, "cells", cells)

    @property
    def map_count(self) -> int:
        """N: number of selected cells."""
        return len(self.cells)

    @property
    def column_count(self) -> int:
        """B: number of non-empty columns."""
        return len({a for a, _ in self.cells})

    @property
    def max_column(self) -> int:
        """C: size of the fullest column."""
        per_column: dict[int, int] = {}
        for a, _ in self.cells:
            per_column[a] = per_column.get(a, 0) + 1
        return max(per_column.values())


def derive_stats(template: CarpetTemplate) -> tuple[int, int, int]:
    """(N, B, C) for a validated template."""
    return template.map_count, template.column_count, template.max_column


@dataclass(frozen=True)
class CarpetFamily:
    """Weighted finite collection of templates.

    Dimension formulas use geometric means over the weights, i.e.
    exp(sum_t w_t * log(stat_t)).
    """

    templates: tuple[CarpetTemplate, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.templates:
            raise DomainError("family needs at least one template")
        if len(self.templates) != len(self.weights):
            raise DomainError("templates and weights length mismatch")
        if any(w <= 0 for w in self.weights):
            raise DomainError("weights must be > 0")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > _PROB_TOL:
            raise DomainError(f"weights sum to {total!r}, not 1")

    def _log_mean(self, stat) -> float:
        return math.fsum(w * math.log(stat(t)) for t, w in zip(self.templates, self.weights))

    @property
    def log_m_bar(self) -> float:
        return self._log_mean(lambda t: t.m)

    @property
    def log_n_bar(self) -> float:
        return self._log_mean(lambda t: t.n)

    @property
    def log_b_bar(self) -> float:
        return self._log_mean(lambda t: t.column_count)

    @property
    def log_c_bar(self) -> float:
        return self._log_mean(lambda t: t.max_column)

    @property
    def log_map_bar(self) -> float:
        return self._log_mean(lambda t: t.map_count)

    @property
    def affinity_band(self) -> float:
        """Largest admissible phi value for the covering estimate:
        log(n_bar)/log(m_bar) - 1."""
        return self.log_n_bar / self.log_m_bar - 1.0

    def family_hash(self) -> str:
        payload = [
            [t.m, t.n, sorted(t.cells), repr(w)]
            for t, w in zip(self.templates, self.weights)
        ]
        digest = hashlib.sha256(json.dumps(payload).encode()).hexdigest()
        return digest[:12]


def box_dim(family: CarpetFamily) -> float:
    """log(B_bar)/log(m_bar) + log(N_bar/B_bar)/log(n_bar)."""
    return family.log_b_bar / family.log_m_bar + (
        family.log_map_bar - family.log_b_bar
    ) / family.log_n_bar


def quasi_assouad(family: CarpetFamily) -> float:
    """log(B_bar)/log(m_bar) + log(C_bar)/log(n_bar)."""
    return family.log_b_bar / family.log_m_bar + family.log_c_bar / family.log_n_bar


def assouad_dim(family: CarpetFamily) -> float:
    """max_t log(B_t)/log(m_t) + max_t log(C_t)/log(n_t).

    The two maxima are independent and the value does not depend on the
    weights, only on the support.
    """
    base = max(math.log(t.column_count) / math.log(t.m) for t in family.templates)
    height = max(math.log(t.max_column) / math.log(t.n) for t in family.templates)
    return base + height


def assouad_spectrum(family: CarpetFamily, theta: float) -> float:
    """Almost-sure covering exponent at the fixed-exponent pairing theta.

    Piecewise in theta with the branch point at log(m_bar)/log(n_bar); the
    upper branch is constant and equals quasi_assouad(family).
    """
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must be in (0, 1), got {theta}")
    lm, ln = family.log_m_bar, family.log_n_bar
    lb, lc, lN = family.log_b_bar, family.log_c_bar, family.log_map_bar
    theta_star = lm / ln
    if theta <= theta_star:
        return (
            (lb + theta * (lc - lN)) / lm + (lN - lb - theta * lc) / ln
        ) / (1.0 - theta)
    return lb / lm + lc / ln


@dataclass(frozen=True)
class CarpetCoding:
    """Sampled template sequence with the four prefix-sum tracks.

    width_prefix / height_prefix accumulate log(m) / log(n) (both strictly
    increasing); column_prefix / stack_prefix accumulate log(B) / log(C) for
    the covering windows.
    """

    family: CarpetFamily
    letters: np.ndarray
    seed: int
    width_prefix: np.ndarray
    height_prefix: np.ndarray
    column_prefix: np.ndarray
    stack_prefix: np.ndarray

    @property
    def length(self) -> int:
        return len(self.letters)


def sample_carpet_coding(family: CarpetFamily, length: int, seed: int) -> CarpetCoding:
    """Draw i.i.d. template letters with the family weights."""
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(np.asarray(family.weights))
    letters = np.searchsorted(cdf, rng.random(length), side="right")
    letters = np.minimum(letters, len(family.templates) - 1).astype(np.int64)
    log_m = np.array([math.log(t.m) for t in family.templates])
    log_n = np.array([math.log(t.n) for t in family.templates])
    log_b = np.array([math.log(t.column_count) for t in family.templates])
    log_c = np.array([math.log(t.max_column) for t in family.templates])
    zero = np.zeros(1)
    return CarpetCoding(
        family=family,
        letters=letters,
        seed=int(seed),
        width_prefix=np.concatenate((zero, np.cumsum(log_m[letters]))),
        height_prefix=np.concatenate((zero, np.cumsum(log_n[letters]))),
        column_prefix=np.concatenate((zero, np.cumsum(log_b[letters]))),
        stack_prefix=np.concatenate((zero, np.cumsum(log_c[letters]))),
    )


def k1_k2(coding: CarpetCoding, R: float) -> tuple[int, int]:
    """Dual stopping times: least levels where base length resp. height <= R.

    Heights shrink faster (n > m), so k2 <= k1 always; both are >= 1 by
    convention.
    """
    if not 0.0 < R < 1.0:
        raise DomainError(f"scale R must be in (0, 1), got {R}")
    target = -math.log(R)
    if target > coding.width_prefix[-1]:
        raise OutOfDepthError(f"scale R={R} beyond sampled depth")
    k1 = max(int(np.searchsorted(coding.width_prefix, target, side="left")), 1)
    k2 = max(int(np.searchsorted(coding.height_prefix, target, side="left")), 1)
    return k1, k2


def covering_estimate(coding: CarpetCoding, R: float, phi: DimensionFunction) -> float:
    """log covering number of an R-ball at scale r = R**(1+phi(R)).

    The count is the product of C over the height window (k2(R), k2(r)] times
    the product of B over the base window (k1(R), k1(r)], both half-open so
    the degenerate no-op windows give count 1 exactly.  For summable phi the
    value phi(R) must stay below the affinity band log(n_bar)/log(m_bar) - 1;
    beyond it the two-window estimate is no longer the right count and the
    call is rejected.
    """
    if not 0.0 < R < 1.0:
        raise DomainError(f"scale R must be in (0, 1), got {R}")
    u = -math.log(R)
    phi_val = float(phi.at_neglog(u))
    _check_affinity_band(coding.family, phi, phi_val)
    target = (1.0 + phi_val) * u
    if target > coding.width_prefix[-1]:
        raise OutOfDepthError(f"paired scale for R={R} beyond sampled depth")
    k1_R = max(int(np.searchsorted(coding.width_prefix, u, side="left")), 1)
    k1_r = max(int(np.searchsorted(coding.width_prefix, target, side="left")), 1)
    k2_R = max(int(np.searchsorted(coding.height_prefix, u, side="left")), 1)
    k2_r = max(int(np.searchsorted(coding.height_prefix, target, side="left")), 1)
    return float(
        coding.stack_prefix[k2_r]
        - coding.stack_prefix[k2_R]
        + coding.column_prefix[k1_r]
        - coding.column_prefix[k1_R]
    )


def _check_affinity_band(
    family: CarpetFamily, phi: DimensionFunction, phi_val: float
) -> None:
    verdict = classify_summability(phi).verdict
    if verdict is Summability.CONVERGENT and phi_val > family.affinity_band + 1e-12:
        raise AffinityBandError(
            f"phi value {phi_val:.6g} exceeds the affinity band "
            f"{family.affinity_band:.6g} for this family"
        )


class CarpetWitness(NamedTuple):
    k: int
    base_level: int
    height_start: int
    height_level: int
    log_count: float


def phi_assouad_estimate(
    coding: CarpetCoding,
    phi: DimensionFunction,
    k_range: tuple[int, int],
) -> tuple[float, CarpetWitness]:
    """Covering exponent sup over base levels k in k_range.

    R is the base length at level k; r = R**(1+phi(R)).  The candidate value
    is the two-window log count divided by log(R/r) = phi(R) * log(1/R).
    Levels where summable phi exceeds the affinity band are skipped (and
    reported if nothing admissible remains).
    """
    lo, hi = int(k_range[0]), int(k_range[1])
    length = coding.length
    ks = np.arange(max(lo, 1), min(hi, length) + 1)
    if ks.size == 0:
        raise NoAdmissiblePairError(f"empty admissible k range from {k_range}")
    width = coding.width_prefix
    u = width[ks]
    admissible = (u > phi.min_neglog) & (u < phi.max_neglog)
    ks, u = ks[admissible], u[admissible]
    if ks.size == 0:
        raise NoAdmissiblePairError(
            f"no k in {k_range} reaches scales below the validity bound of {phi.label}"
        )
    phi_vals = np.asarray(phi.at_neglog(u))
    if classify_summability(phi).verdict is Summability.CONVERGENT:
        inside = phi_vals <= coding.family.affinity_band + 1e-12
        if not np.any(inside):
            raise AffinityBandError(
                f"{phi.label} exceeds the affinity band "
                f"{coding.family.affinity_band:.6g} at every level in {k_range}"
            )
        ks, u, phi_vals = ks[inside], u[inside], phi_vals[inside]
    if np.any(phi_vals <= 0.0):
        raise DomainError("zero scale gap: the carpet estimator needs phi > 0")
    targets = (1.0 + phi_vals) * u
    fits = targets <= width[-1]
    ks, u, phi_vals, targets = ks[fits], u[fits], phi_vals[fits], targets[fits]
    if ks.size == 0:
        raise NoAdmissiblePairError(
            f"every pair in {k_range} needs letters beyond length {length}"
        )
    height = coding.height_prefix
    k1_r = np.searchsorted(width, targets, side="left")
    k2_R = np.maximum(np.searchsorted(height, u, side="left"), 1)
    k2_r = np.maximum(np.searchsorted(height, targets, side="left"), 1)
    log_counts = (
        coding.stack_prefix[k2_r]
        - coding.stack_prefix[k2_R]
        + coding.column_prefix[k1_r]
        - coding.column_prefix[ks]
    )
    s_values = log_counts / (phi_vals * u)
    i = int(np.argmax(s_values))
    witness = CarpetWitness(
        k=int(ks[i]),
        base_level=int(k1_r[i]),
        height_start=int(k2_R[i]),
        height_level=int(k2_r[i]),
        log_count=float(log_counts[i]),
    )
    return float(s_values[i]), witness


class TwoBlockEvent(NamedTuple):
    height_pos: int
    height_run: int
    base_pos: int
    base_run: int


def detect_two_block_runs(
    coding: CarpetCoding, phi: DimensionFunction
) -> list[TwoBlockEvent]:
    """Positions where both extremal letter blocks occur together.

    The height-extremal template (maximal log C / log n) must repeat for
    ceil(psi(l)*l) letters from position l, and the base-extremal template
    (maximal log B / log m) for ceil(kappa*psi(l)*l) letters from the level
    where base length reaches the height scale of level l.  Ties designate
    the lowest template index; a single-template family merges both blocks.
    Every hit is re-verified by a direct scan.  Positions are 1-based.
    """
    family = coding.family
    base_scores = [math.log(t.column_count) / math.log(t.m) for t in family.templates]
    height_scores = [math.log(t.max_column) / math.log(t.n) for t in family.templates]
    base_star = int(np.argmax(base_scores))
    height_star = int(np.argmax(height_scores))
    n_min = min(t.n for t in family.templates)
    n_max = max(t.n for t in family.templates)
    kappa = math.log(family.templates[height_star].n) / math.log(
        family.templates[base_star].m
    )
    factor = math.log(family.templates[height_star].n) / math.log(n_max)

    length = coding.length
    ls = np.arange(1, length + 1)
    u = ls * math.log(n_min)
    admissible = (u > phi.min_neglog) & (u < phi.max_neglog)
    ls, u = ls[admissible], u[admissible]
    if ls.size == 0:
        return []
    psi_ll = np.asarray(phi.at_neglog(u)) * factor * ls
    height_run = np.maximum(1, np.ceil(psi_ll)).astype(np.int64)
    base_run = np.maximum(1, np.ceil(kappa * psi_ll)).astype(np.int64)
    # base block starts where base length first reaches the height scale at l
    base_pos = np.maximum(
        np.searchsorted(coding.width_prefix, coding.height_prefix[ls], side="left"), 1
    )
    fits = (ls - 1 + height_run <= length) & (base_pos - 1 + base_run <= length)
    ls, height_run, base_run, base_pos = (
        ls[fits],
        height_run[fits],
        base_run[fits],
        base_pos[fits],
    )
    if ls.size == 0:
        return []
    is_height = np.concatenate(
        (np.zeros(1, dtype=np.int64), np.cumsum(coding.letters == height_star))
    )
    is_base = np.concatenate(
        (np.zeros(1, dtype=np.int64), np.cumsum(coding.letters == base_star))
    )
    full = (is_height[ls - 1 + height_run] - is_height[ls - 1] == height_run) & (
        is_base[base_pos - 1 + base_run] - is_base[base_pos - 1] == base_run
    )
    events = [
        TwoBlockEvent(int(l), int(h), int(b), int(w))
        for l, h, b, w in zip(ls[full], height_run[full], base_pos[full], base_run[full])
    ]
    for ev in events:
        block2 = coding.letters[ev.height_pos - 1 : ev.height_pos - 1 + ev.height_run]
        block1 = coding.letters[ev.base_pos - 1 : ev.base_pos - 1 + ev.base_run]
        if not (np.all(block2 == height_star) and np.all(block1 == base_star)):
            raise RuntimeError(f"event at {ev.height_pos} failed re-verification")  # pragma: no cover
    return events
