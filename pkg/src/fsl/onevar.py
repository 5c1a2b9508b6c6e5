"""One-variable random self-similar codings.

One random homogeneous similarity system (branch count N, common contraction
ratio c) is drawn per construction level and shared by every cylinder at that
level.  All covering data is symbolic: the cylinder containing a point at
scale R is the prefix of length k(R) = least k with prod_{i<=k} c_i <= R, and
the number of r-cylinders inside it is the product of the branch counts over
the letters between k(R) and k(r).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dimfunc import DimensionFunction
from .errors import DomainError, NoAdmissiblePairError, OutOfDepthError

__all__ = [
    "HomogeneousIFS",
    "IFSFamily",
    "CodingSequence",
    "CodingWitness",
    "assouad_dim",
    "box_dim",
    "box_dim_bisect",
    "covering_count",
    "detect_runs",
    "extreme_set",
    "k_of_R",
    "log_covering_count",
    "phi_assouad_estimate",
    "sample_coding",
]

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class HomogeneousIFS:
    """A similarity system with branch_count maps of common ratio in (0, 1).

    branch_count * ratio <= 1 is enforced: it is the packing condition a
    separated system on the line must satisfy.
    """

    branch_count: int
    ratio: float
    label: str = ""

    def __post_init__(self):
        if self.branch_count < 1 or self.branch_count != int(self.branch_count):
            raise DomainError(f"branch count must be integer >= 1, got {self.branch_count}")
        if not 0.0 < self.ratio < 1.0:
            raise DomainError(f"contraction ratio must be in (0, 1), got {self.ratio}")
        if self.branch_count * self.ratio > 1.0 + 1e-12:
            raise DomainError(
                f"{self.branch_count} maps of ratio {self.ratio} cannot be packed "
                "without overlap (N * c > 1)"
            )

    @property
    def exponent(self) -> float:
        """Similarity exponent log(N) / log(1/c)."""
        return math.log(self.branch_count) / -math.log(self.ratio)


@dataclass(frozen=True)
class IFSFamily:
    """Finitely many homogeneous systems with sampling weights.

    A family whose entries all share one similarity exponent carries no
    randomness at the level of dimensions; such degenerate families are
    rejected unless allow_degenerate is set.
    """

    entries: tuple[HomogeneousIFS, ...]
    weights: tuple[float, ...]
    allow_degenerate: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise DomainError("family needs at least one entry")
        if len(self.entries) != len(self.weights):
            raise DomainError("entries and weights length mismatch")
        if any(w <= 0 for w in self.weights):
            raise DomainError("weights must be > 0")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > _PROB_TOL:
            raise DomainError(f"weights sum to {total!r}, not 1")
        if not self.allow_degenerate:
            exponents = {e.exponent for e in self.entries}
            if len(exponents) < 2:
                raise DomainError(
                    "all entries share one similarity exponent; pass "
                    "allow_degenerate=True to opt into the degenerate case"
                )

    @property
    def ratios(self) -> np.ndarray:
        return np.array([e.ratio for e in self.entries])

    @property
    def c_inf(self) -> float:
        return min(e.ratio for e in self.entries)

    @property
    def c_sup(self) -> float:
        return max(e.ratio for e in self.entries)

    @property
    def exponents(self) -> np.ndarray:
        return np.array([e.exponent for e in self.entries])

    def family_hash(self) -> str:
        payload = [[e.branch_count, repr(e.ratio), repr(w)] for e, w in zip(self.entries, self.weights)]
        digest = hashlib.sha256(json.dumps(payload).encode()).hexdigest()
        return digest[:12]


def box_dim(family: IFSFamily) -> float:
    """Almost-sure box dimension: E(log N) / E(log 1/c) over the weights."""
    num = math.fsum(w * math.log(e.branch_count) for e, w in zip(family.entries, family.weights))
    den = math.fsum(w * -math.log(e.ratio) for e, w in zip(family.entries, family.weights))
    return num / den


def box_dim_bisect(family: IFSFamily, tol: float = 1e-13) -> float:
    """Root of E(log(N * c**s)) = 0 by bisection; cross-check for box_dim."""

    def pressure(s: float) -> float:
        return math.fsum(
            w * (math.log(e.branch_count) + s * math.log(e.ratio))
            for e, w in zip(family.entries, family.weights)
        )

    lo = 0.0
    if pressure(lo) <= 0.0:
        return 0.0
    hi = 1.0
    while pressure(hi) > 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise DomainError("pressure equation has no root below 1e6")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pressure(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def assouad_dim(family: IFSFamily) -> float:
    """Almost-sure two-scale extremal dimension: max entry exponent."""
    return float(max(e.exponent for e in family.entries))


@dataclass(frozen=True)
class CodingSequence:
    """A sampled letter sequence with prefix sums of log(1/c) and log(N).

    log_ratio_prefix[k] = sum_{i<=k} log(1/c(w_i)) is strictly increasing, so
    scale-to-level lookups are binary searches.
    """

    family: IFSFamily
    letters: np.ndarray
    seed: int
    log_ratio_prefix: np.ndarray
    log_branch_prefix: np.ndarray

    @property
    def length(self) -> int:
        return len(self.letters)


def sample_coding(family: IFSFamily, length: int, seed: int) -> CodingSequence:
    """Draw i.i.d. letters with the family weights; deterministic per seed."""
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(np.asarray(family.weights))
    letters = np.searchsorted(cdf, rng.random(length), side="right")
    letters = np.minimum(letters, len(family.entries) - 1).astype(np.int64)
    log_inv_ratio = np.array([-math.log(e.ratio) for e in family.entries])
    log_branch = np.array([math.log(e.branch_count) for e in family.entries])
    zero = np.zeros(1)
    return CodingSequence(
        family=family,
        letters=letters,
        seed=int(seed),
        log_ratio_prefix=np.concatenate((zero, np.cumsum(log_inv_ratio[letters]))),
        log_branch_prefix=np.concatenate((zero, np.cumsum(log_branch[letters]))),
    )


def k_of_R(coding: CodingSequence, R: float) -> int:
    """Least level k >= 1 with prod_{i<=k} c(w_i) <= R."""
    if not 0.0 < R < 1.0:
        raise DomainError(f"scale R must be in (0, 1), got {R}")
    target = -math.log(R)
    prefix = coding.log_ratio_prefix
    if target > prefix[-1]:
        raise OutOfDepthError(
            f"scale R={R} lies beyond the sampled depth (need more letters)"
        )
    return max(int(np.searchsorted(prefix, target, side="left")), 1)


def log_covering_count(coding: CodingSequence, k: int, l: int) -> float:
    """log of prod_{i=k+1}^{l} N(w_i), the symbolic covering number."""
    _check_window(coding, k, l)
    return float(coding.log_branch_prefix[l] - coding.log_branch_prefix[k])


def covering_count(coding: CodingSequence, k: int, l: int) -> int:
    """Exact integer covering number over the window (k, l]."""
    _check_window(coding, k, l)
    branch = [e.branch_count for e in coding.family.entries]
    return math.prod(branch[w] for w in coding.letters[k:l])


def _check_window(coding: CodingSequence, k: int, l: int) -> None:
    if not 0 <= k <= l <= coding.length:
        raise DomainError(f"need 0 <= k <= l <= {coding.length}, got k={k}, l={l}")


class CodingWitness(NamedTuple):
    k: int
    level: int
    log_count: float


def phi_assouad_estimate(
    coding: CodingSequence,
    phi: DimensionFunction,
    k_range: tuple[int, int],
) -> tuple[float, CodingWitness]:
    """Covering exponent sup over start levels k in k_range.

    For each admissible k the scales are R = prod_{i<=k} c(w_i) and
    r = R**(1+phi(R)) resolved to the least level l with the prefix product
    <= r; the candidate value is log(count(k, l)) / log(R / r_realised).
    Codings are spatially homogeneous at a fixed scale, so no sup over
    centres is needed.  l is forced > k so the scale drop stays strict.
    """
    lo, hi = int(k_range[0]), int(k_range[1])
    length = coding.length
    ks = np.arange(max(lo, 1), min(hi, length - 1) + 1)
    if ks.size == 0:
        raise NoAdmissiblePairError(f"empty admissible k range from {k_range}")
    prefix = coding.log_ratio_prefix
    u = prefix[ks]
    admissible = (u > phi.min_neglog) & (u < phi.max_neglog)
    ks, u = ks[admissible], u[admissible]
    if ks.size == 0:
        raise NoAdmissiblePairError(
            f"no k in {k_range} reaches scales below the validity bound of {phi.label}"
        )
    targets = (1.0 + np.asarray(phi.at_neglog(u))) * u
    ls = np.searchsorted(prefix, targets, side="left")
    ls = np.maximum(ls, ks + 1)
    fits = ls <= length
    ks, ls = ks[fits], ls[fits]
    if ks.size == 0:
        raise NoAdmissiblePairError(
            f"every pair in {k_range} needs letters beyond length {length}"
        )
    branch = coding.log_branch_prefix
    s_values = (branch[ls] - branch[ks]) / (prefix[ls] - prefix[ks])
    i = int(np.argmax(s_values))
    witness = CodingWitness(
        k=int(ks[i]),
        level=int(ls[i]),
        log_count=float(branch[ls[i]] - branch[ks[i]]),
    )
    return float(s_values[i]), witness


def extreme_set(family: IFSFamily, eps: float) -> tuple[tuple[int, ...], float]:
    """Entries within eps of the maximal exponent, with their total weight."""
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    exponents = family.exponents
    top = exponents.max()
    idx = np.nonzero(exponents >= top - eps)[0]
    weight = math.fsum(family.weights[i] for i in idx)
    return tuple(int(i) for i in idx), weight


def detect_runs(
    coding: CodingSequence, phi: DimensionFunction, eps: float = 0.0
) -> list[tuple[int, int]]:
    """All letter positions n starting a full near-extremal run.

    A run at n requires every letter in [n, n + ceil(psi(n)*n)) to lie in the
    extreme set, where psi(n) = phi(c_sup**n) * log(c_inf)/log(c_sup).  The
    window scan uses prefix sums; every hit is re-verified by a direct
    membership scan before being reported.  Positions are 1-based.
    """
    family = coding.family
    members, _ = extreme_set(family, eps)
    member_mask = np.isin(coding.letters, np.asarray(members))
    length = coding.length
    gamma = math.log(family.c_inf) / math.log(family.c_sup)
    log_inv_sup = -math.log(family.c_sup)

    ns = np.arange(1, length + 1)
    u = ns * log_inv_sup
    admissible = (u > phi.min_neglog) & (u < phi.max_neglog)
    ns, u = ns[admissible], u[admissible]
    if ns.size == 0:
        return []
    run_len = np.maximum(1, np.ceil(np.asarray(phi.at_neglog(u)) * gamma * ns)).astype(np.int64)
    fits = ns - 1 + run_len <= length
    ns, run_len = ns[fits], run_len[fits]
    msum = np.concatenate((np.zeros(1, dtype=np.int64), np.cumsum(member_mask)))
    full = msum[ns - 1 + run_len] - msum[ns - 1] == run_len
    hits = [(int(n), int(w)) for n, w in zip(ns[full], run_len[full])]
    member_set = set(members)
    for n, w in hits:
        if not all(int(letter) in member_set for letter in coding.letters[n - 1 : n - 1 + w]):
            raise RuntimeError(f"run at {n} failed re-verification")  # pragma: no cover
    return hits
