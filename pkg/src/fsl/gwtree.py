"""Branching trees on the symbolic boundary.

Trees are simulated in an arena layout (one contiguous array of child counts
per level plus first-child offsets), which makes the descendant-count passes
needed for covering numbers a sequence of vectorised segment sums.  A ball of
radius base**-k around a boundary point is exactly the subtree below one
level-k node, so covering numbers are descendant counts and the covering
exponent between levels k and l is log(count) / ((l-k) * log(base)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dimfunc import DimensionFunction, gap_levels
from .errors import (
    AllExtinctError,
    CapExceededError,
    DomainError,
    ExtinctionPersistentError,
    NoAdmissiblePairError,
    SubcriticalError,
)

__all__ = [
    "OffspringDistribution",
    "GWTree",
    "Witness",
    "TailCheck",
    "TheoreticalDims",
    "chernoff_tail_empirical",
    "condition_on_survival",
    "covering_count",
    "covering_counts",
    "mean_offspring",
    "normalized_population",
    "percolation_offspring",
    "phi_assouad_estimate",
    "simulate",
    "theoretical_dims",
]

_PROB_TOL = 1e-12
DEFAULT_NODE_CAP = 30_000_000
ESTIMATE_MODES = ("exact_gap", "at_least_gap")


@dataclass(frozen=True)
class OffspringDistribution:
    """Law of the per-node child count on {0, ..., N}.

    probs[j] is P(X = j); trailing zero entries are trimmed so that the last
    entry is the positive mass at the maximal count N.  metric_base is the
    base b of the boundary metric d(x, y) = b**-(level of the common
    ancestor).
    """

    probs: tuple[float, ...]
    metric_base: float = 2.0

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if any(p < 0 for p in probs):
            raise DomainError("offspring probabilities must be >= 0")
        if abs(math.fsum(probs) - 1.0) > _PROB_TOL:
            raise DomainError(f"offspring probabilities sum to {math.fsum(probs)!r}")
        while probs and probs[-1] == 0.0:
            probs = probs[:-1]
        if len(probs) < 2:
            raise DomainError("maximal offspring count must be >= 1 with positive mass")
        if self.metric_base <= 1.0:
            raise DomainError(f"metric base must be > 1, got {self.metric_base}")
        object.__setattr__(self, "probs", probs)

    @property
    def max_offspring(self) -> int:
        return len(self.probs) - 1

    @property
    def mean(self) -> float:
        return math.fsum(j * p for j, p in enumerate(self.probs))


def mean_offspring(dist: OffspringDistribution) -> float:
    """Mean child count m = sum_j j * P(X = j)."""
    return dist.mean


@dataclass
class GWTree:
    """Depth-limited sampled tree in arena layout.

    child_counts[k][v] is the child count of node v at level k (k < depth);
    offsets[k][v] is the index of its first child inside level k+1.
    populations[k] is the number of nodes at level k for k = 0..depth.
    """

    dist: OffspringDistribution
    depth: int
    seed: int
    child_counts: list[np.ndarray]
    offsets: list[np.ndarray]
    populations: np.ndarray
    extinct_at: Optional[int]

    def population(self, k: int) -> int:
        return int(self.populations[k])

    @property
    def is_extinct(self) -> bool:
        return self.extinct_at is not None


def simulate(
    dist: OffspringDistribution,
    depth: int,
    seed: int,
    node_cap: int = DEFAULT_NODE_CAP,
) -> GWTree:
    """Sample a tree of the given depth; deterministic in (dist, depth, seed)."""
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth}")
    if node_cap < 1:
        raise DomainError(f"node_cap must be >= 1, got {node_cap}")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(np.asarray(dist.probs))
    child_counts: list[np.ndarray] = []
    offsets: list[np.ndarray] = []
    populations = np.zeros(depth + 1, dtype=np.int64)
    populations[0] = 1
    z = 1
    total = 1
    extinct_at: Optional[int] = None
    for level in range(depth):
        if z > 0:
            u = rng.random(z)
            counts = np.searchsorted(cdf, u, side="right").astype(np.int32)
            np.minimum(counts, dist.max_offspring, out=counts)
        else:
            counts = np.zeros(0, dtype=np.int32)
        nxt = int(counts.sum())
        total += nxt
        if total > node_cap:
            raise CapExceededError(
                f"tree exceeded node cap {node_cap} at level {level + 1}"
            )
        child_counts.append(counts)
        offsets.append(np.cumsum(counts, dtype=np.int64) - counts)
        populations[level + 1] = nxt
        if nxt == 0 and extinct_at is None:
            extinct_at = level + 1
        z = nxt
    return GWTree(
        dist=dist,
        depth=depth,
        seed=int(seed),
        child_counts=child_counts,
        offsets=offsets,
        populations=populations,
        extinct_at=extinct_at,
    )


def condition_on_survival(
    dist: OffspringDistribution,
    depth: int,
    seed: int,
    max_retries: int = 64,
    node_cap: int = DEFAULT_NODE_CAP,
) -> GWTree:
    """First tree alive at the target depth among seeds seed+0, seed+1, ..."""
    if max_retries < 1:
        raise DomainError(f"max_retries must be >= 1, got {max_retries}")
    for attempt in range(max_retries):
        tree = simulate(dist, depth, seed + attempt, node_cap=node_cap)
        if tree.population(depth) > 0:
            return tree
    raise ExtinctionPersistentError(
        f"no surviving tree in {max_retries} attempts from seed {seed}"
    )


def normalized_population(tree: GWTree, k: int) -> float:
    """Z_k / m**k, the martingale-normalised population at level k."""
    if not 0 <= k <= tree.depth:
        raise DomainError(f"level {k} outside [0, {tree.depth}]")
    return tree.population(k) / tree.dist.mean**k


def covering_counts(tree: GWTree, k: int, l: int) -> np.ndarray:
    """Descendant counts at level l for every node at level k (exact).

    One bottom-up pass of segment sums; empty subtrees yield 0.  Falls back
    to float64 accumulation when counts could overflow int64.
    """
    if not 0 <= k <= l <= tree.depth:
        raise DomainError(f"need 0 <= k <= l <= depth, got k={k}, l={l}")
    n_max = max(tree.dist.max_offspring, 2)
    dtype = np.float64 if (l - k) * math.log2(n_max) > 62 else np.int64
    counts = np.ones(tree.population(l), dtype=dtype)
    for j in range(l - 1, k - 1, -1):
        acc = np.concatenate((np.zeros(1, dtype=dtype), np.cumsum(counts)))
        starts = tree.offsets[j]
        counts = acc[starts + tree.child_counts[j]] - acc[starts]
    return counts


def covering_count(tree: GWTree, k: int, v: int, l: int) -> int:
    """Descendants at level l of the single node v at level k."""
    level = covering_counts(tree, k, l)
    if not 0 <= v < len(level):
        raise DomainError(f"node {v} does not exist at level {k}")
    return int(level[v])


class Witness(NamedTuple):
    k: int
    node: int
    level: int
    count: int


def _reduced_exponent(count: int, gap: int, base: float) -> float:
    """log(count) / (gap * log(base)) with perfect powers reduced first.

    Writing count = root**e with maximal integer e removes the float noise
    of log(root**e) vs e*log(root), so exactly self-similar trees produce
    exactly log(N)/log(base).
    """
    if count <= 1:
        return 0.0
    root, exponent = count, 1
    for e in range(count.bit_length() - 1, 1, -1):
        r = round(count ** (1.0 / e))
        for cand in (r - 1, r, r + 1):
            if cand >= 2 and cand**e == count:
                root, exponent = cand, e
                break
        else:
            continue
        break
    return (exponent / gap) * (math.log(root) / math.log(base))


def phi_assouad_estimate(
    tree: GWTree,
    phi: DimensionFunction,
    k_range: tuple[int, int],
    mode: str = "exact_gap",
) -> tuple[float, Witness]:
    """Empirical covering exponent sup over admissible scale pairs.

    For each k in k_range with l = k + gap_levels(phi, k, base) <= depth the
    candidate value is log(count) / ((l - k) * log(base)) maximised over the
    level-k nodes; "at_least_gap" additionally maximises over all deeper
    levels l' >= l (the phi = zero convention for the plain two-scale
    extremum).  Nodes with zero descendants are skipped.
    """
    if mode not in ESTIMATE_MODES:
        raise DomainError(f"mode must be one of {ESTIMATE_MODES}, got {mode!r}")
    lo, hi = int(k_range[0]), int(k_range[1])
    if lo > hi:
        raise DomainError(f"empty k_range {k_range}")
    base = tree.dist.metric_base
    log_base = math.log(base)
    any_admissible = False
    best: Optional[tuple[float, Witness]] = None
    for k in range(max(lo, 1), min(hi, tree.depth) + 1):
        try:
            gap = gap_levels(phi, k, base)
        except DomainError:
            continue
        first_l = k + gap
        if first_l > tree.depth:
            continue
        any_admissible = True
        last_l = tree.depth if mode == "at_least_gap" else first_l
        for l in range(first_l, last_l + 1):
            level = covering_counts(tree, k, l)
            if level.size == 0:
                continue
            node = int(np.argmax(level))
            count = int(level[node])
            if count < 1:
                continue
            s = math.log(count) / ((l - k) * log_base)
            if best is None or s > best[0]:
                best = (s, Witness(k=k, node=node, level=l, count=count))
    if not any_admissible:
        raise NoAdmissiblePairError(
            f"no admissible (k, l) pair within depth {tree.depth} for {phi.label}"
        )
    if best is None:
        raise AllExtinctError("every admissible subtree was extinct")
    _, witness = best
    s_hat = _reduced_exponent(witness.count, witness.level - witness.k, base)
    return s_hat, witness


class TheoreticalDims(NamedTuple):
    box: float
    quasi_assouad: float
    assouad: float


def theoretical_dims(dist: OffspringDistribution) -> TheoreticalDims:
    """Almost-sure dimensions of the boundary: (log m, log m, log N) / log b."""
    m = dist.mean
    if m <= 1.0:
        raise SubcriticalError(f"mean offspring {m} <= 1: boundary is a.s. degenerate")
    log_b = math.log(dist.metric_base)
    box = math.log(m) / log_b
    return TheoreticalDims(
        box=box,
        quasi_assouad=box,
        assouad=math.log(dist.max_offspring) / log_b,
    )


class TailCheck(NamedTuple):
    p_hat: float
    bound_shape: float
    exceedances: int
    trials: int


def chernoff_tail_empirical(
    dist: OffspringDistribution,
    k: int,
    epsilon: float,
    trials: int,
    seed: int,
) -> TailCheck:
    """Monte Carlo estimate of P(Z_k >= m**((1+eps)*k)).

    Population sizes are advanced with compound multinomial draws, so each
    trial is an exact sample of Z_k without building trees.  bound_shape is
    exp(-m**(eps*k)), the decay profile the tail bound predicts up to
    constants (the prefactor and tilt in the bound are existential).
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    m = dist.mean
    if m <= 1.0:
        raise SubcriticalError(f"mean offspring {m} <= 1")
    rng = np.random.default_rng(seed)
    probs = np.asarray(dist.probs)
    values = np.arange(dist.max_offspring + 1, dtype=np.int64)
    z = np.ones(trials, dtype=np.int64)
    for _ in range(k):
        z = rng.multinomial(z, probs) @ values
    threshold = m ** ((1.0 + epsilon) * k)
    exceed = int(np.count_nonzero(z >= threshold))
    shape_arg = m ** (epsilon * k)
    bound_shape = math.exp(-shape_arg) if shape_arg < 745.0 else 0.0
    return TailCheck(
        p_hat=exceed / trials,
        bound_shape=bound_shape,
        exceedances=exceed,
        trials=trials,
    )


def percolation_offspring(n: int, d: int, p: float) -> OffspringDistribution:
    """Offspring law of grid percolation: keep each of the n**d subcells
    of an n-fold grid subdivision independently with probability p.

    The survivor count per cell is Binomial(n**d, p) and cell diameters
    shrink by 1/n per level, so the boundary metric base is n.
    """
    if n < 2:
        raise DomainError(f"grid subdivision n must be >= 2, got {n}")
    if d < 1:
        raise DomainError(f"dimension d must be >= 1, got {d}")
    if not 0.0 < p <= 1.0:
        raise DomainError(f"retention probability must be in (0, 1], got {p}")
    total = n**d
    q = 1.0 - p
    probs = tuple(math.comb(total, j) * p**j * q ** (total - j) for j in range(total + 1))
    return OffspringDistribution(probs=probs, metric_base=float(n))
