"""Recruitment weights and cohort samplers.

Binary covariates get weight 1-p for x=+1 and p for x=-1 (p the pool
fraction of +1), continuous covariates get q/(c' p(x)) inside the 0.05-0.95
quantile band and 1 outside, and several covariates are combined by taking
the product of their unnormalized weights. Cohorts are drawn from the weights
by successive sampling without replacement, or by stratifying on the joint
binary cell and drawing equal numbers from each stratum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .density import DEFAULT_GRID_POINTS, DensityEstimate, TruncationBand, kde_fit, truncation_band
from .errors import DegenerateCovariate, InfeasibleCohort, LengthMismatch, TooManyStrata
from .pool import Pool

SUM_TOLERANCE = 1e-9


class Protocol(str, enum.Enum):
    RANDOM = "random"
    MARGINAL = "marginal"
    JOINT = "joint"
    CONTINUOUS = "continuous"
    MIXED = "mixed"


@dataclass(frozen=True, eq=False)
class RecruitmentWeights:
    unnormalized: np.ndarray
    normalized: np.ndarray
    c: float

    @classmethod
    def from_unnormalized(cls, w) -> "RecruitmentWeights":
        w = np.array(w, dtype=float, copy=True)
        if w.ndim != 1 or w.size == 0:
            raise LengthMismatch("weights must be a non-empty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        c = float(w.sum())
        if not c > 0:
            raise InfeasibleCohort("all recruitment weights are zero")
        p = w / c
        w.setflags(write=False)
        p.setflags(write=False)
        return cls(w, p, c)

    def __len__(self):
        return len(self.unnormalized)


@dataclass(frozen=True, eq=False)
class Cohort:
    indices: np.ndarray
    protocol: Protocol
    seed: int
    imperfect: bool = False

    def __post_init__(self):
        idx = np.sort(np.asarray(self.indices, dtype=np.int64))
        if idx.size and np.any(np.diff(idx) == 0):
            raise ValueError("cohort indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "protocol", Protocol(self.protocol))

    @property
    def n(self) -> int:
        return len(self.indices)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def binary_weights(column) -> RecruitmentWeights:
    x = np.asarray(column, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise LengthMismatch("column must be a non-empty vector")
    if not np.all((x == 1.0) | (x == -1.0)):
        raise ValueError("binary column values must be -1 or +1")
    p = float(np.mean(x == 1.0))
    if p in (0.0, 1.0):
        # every individual would get weight zero
        raise DegenerateCovariate("binary column takes a single value; weights are all zero")
    return RecruitmentWeights.from_unnormalized(np.where(x == 1.0, 1.0 - p, p))


def continuous_weights(
    column, band: TruncationBand, estimate: DensityEstimate | None = None, exact: bool = False
) -> RecruitmentWeights:
    """Weights flattening the pool density to uniform between x_l and x_u.

    In-band densities are interpolated from the band grid, which keeps every
    in-band weight at or below 1; ``exact=True`` evaluates the kernel sum at
    each individual instead (requires ``estimate``).
    """
    x = np.asarray(column, dtype=float)
    w = np.ones_like(x)
    inside = band.contains(x)
    if exact:
        if estimate is None:
            raise ValueError("exact evaluation needs the density estimate")
        dens = estimate(x[inside])
    else:
        dens = band.density(x[inside])
    w[inside] = band.q / (band.c_prime * np.maximum(dens, 1e-12))
    return RecruitmentWeights.from_unnormalized(w)


def fit_continuous_weights(column, bandwidth="silverman", grid_points=DEFAULT_GRID_POINTS):
    """KDE, band and weights for one continuous column in one call."""
    est = kde_fit(column, bandwidth)
    band = truncation_band(column, est, grid_points)
    return continuous_weights(column, band, est)


def marginal_product_weights(per_covariate: Sequence[RecruitmentWeights]) -> RecruitmentWeights:
    if len(per_covariate) == 0:
        raise LengthMismatch("need at least one covariate")
    sizes = {len(w) for w in per_covariate}
    if len(sizes) != 1:
        raise LengthMismatch(f"weight vectors have different lengths {sorted(sizes)}")
    prod = np.ones(len(per_covariate[0]))
    for w in per_covariate:
        prod = prod * w.unnormalized
    return RecruitmentWeights.from_unnormalized(prod)


def pool_weights(pool: Pool, covariates: Sequence[str] | None = None, **kw) -> RecruitmentWeights:
    """Product weights over the named covariates, each by its own kind."""
    names = list(covariates) if covariates is not None else pool.names
    factors = []
    for name in names:
        col = pool.column(name)
        if pool.spec(name).is_binary:
            factors.append(binary_weights(col))
        else:
            factors.append(fit_continuous_weights(col, **kw))
    return marginal_product_weights(factors)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def sample_cohort(
    weights: RecruitmentWeights, n: int, seed: int, protocol: Protocol = Protocol.MARGINAL
) -> Cohort:
    """Successive weighted sampling without replacement.

    Each draw picks a remaining individual with probability proportional to its
    weight. This is realised with exponential race times E_i / w_i: the order in
    which the clocks ring has exactly the distribution of the draw sequence, and
    the first n to ring form the cohort.
    """
    w = weights.unnormalized
    n = int(n)
    positive = int(np.count_nonzero(w > 0))
    if n < 0 or n > positive:
        raise InfeasibleCohort(
            f"cannot draw {n} individuals: only {positive} have positive weight"
        )
    rng = np.random.default_rng(seed)
    with np.errstate(divide="ignore"):
        keys = rng.standard_exponential(len(w)) / w
    if n == len(w):
        idx = np.arange(n)
    else:
        idx = np.argpartition(keys, n)[:n] if n else np.empty(0, dtype=np.int64)
    return Cohort(idx, protocol, seed)


def sequential_draw(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Literal draw-zero-renormalize loop; O(nN), kept as a reference sampler."""
    w = np.array(weights, dtype=float, copy=True)
    out = np.empty(n, dtype=np.int64)
    for k in range(n):
        total = w.sum()
        if not total > 0:
            raise InfeasibleCohort("ran out of positive weight")
        i = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
        i = min(i, len(w) - 1)
        while w[i] == 0:  # guards against landing on a zero at the boundary
            i -= 1
        out[k] = i
        w[i] = 0.0
    return out


def random_select(N: int, n: int, seed: int) -> Cohort:
    if not 0 <= n <= N:
        raise InfeasibleCohort(f"cannot select {n} individuals from a pool of {N}")
    rng = np.random.default_rng(seed)
    return Cohort(rng.choice(N, size=n, replace=False), Protocol.RANDOM, seed)


def cell_index(pool: Pool, binary_covariates: Sequence[str]) -> np.ndarray:
    """Joint cell of each individual; the first covariate is the most significant bit, -1 -> 0."""
    cell = np.zeros(pool.N, dtype=np.int64)
    for name in binary_covariates:
        cell = 2 * cell + (pool.column(name) > 0)
    return cell


def allocate_strata(sizes: Sequence[int], n: int) -> tuple[np.ndarray, bool]:
    """Per-cell allocation for an n-cohort and whether balance had to be broken.

    Each cell first gets min(n // K, size). Leftover slots (the n mod K
    remainder plus any shortfall of small cells) go one at a time to the
    least-filled cell that still has members left; among those, the one with
    the largest remaining capacity wins, then the lowest cell index.
    """
    cap = np.asarray(sizes, dtype=np.int64)
    K = len(cap)
    if n > cap.sum():
        raise InfeasibleCohort(f"cannot select {n} individuals from a pool of {cap.sum()}")
    base = n // K
    alloc = np.minimum(cap, base)
    imperfect = bool(np.any(cap < base))
    for _ in range(n - int(alloc.sum())):
        room = cap - alloc
        # lexsort: last key is primary
        order = np.lexsort((np.arange(K), -room, alloc))
        alloc[int(next(k for k in order if room[k] > 0))] += 1
    return alloc, imperfect


def joint_balance_select(pool: Pool, binary_covariates: Sequence[str], n: int, seed: int) -> Cohort:
    names = list(binary_covariates)
    for name in names:
        if not pool.spec(name).is_binary:
            raise ValueError(f"joint balancing needs binary covariates; {name!r} is continuous")
    K = 2 ** len(names)
    if K > pool.N:
        raise TooManyStrata(f"{K} strata exceed the pool size {pool.N}")
    if n > pool.N:
        raise InfeasibleCohort(f"cannot select {n} individuals from a pool of {pool.N}")
    cell = cell_index(pool, names)
    members = [np.flatnonzero(cell == k) for k in range(K)]
    alloc, imperfect = allocate_strata([len(m) for m in members], n)
    rng = np.random.default_rng(seed)
    picks = [rng.choice(m, size=a, replace=False) for m, a in zip(members, alloc)]
    return Cohort(np.concatenate(picks), Protocol.JOINT, seed, imperfect)


def select(
    pool: Pool,
    protocol: Protocol | str,
    n: int,
    seed: int,
    covariates: Sequence[str] | None = None,
) -> Cohort:
    """Draw a cohort of size n from ``pool`` under ``protocol``."""
    protocol = Protocol(protocol)
    names = list(covariates) if covariates is not None else pool.names
    if protocol is Protocol.RANDOM:
        return random_select(pool.N, n, seed)
    if protocol is Protocol.JOINT:
        return joint_balance_select(pool, names, n, seed)
    if protocol is Protocol.CONTINUOUS:
        binary = [nm for nm in names if pool.spec(nm).is_binary]
        if binary:
            raise ValueError(f"continuous protocol given binary covariates {binary}")
    if protocol is Protocol.MARGINAL:
        cont = [nm for nm in names if not pool.spec(nm).is_binary]
        if cont:
            raise ValueError(f"marginal protocol given continuous covariates {cont}; use mixed")
    return sample_cohort(pool_weights(pool, names), n, seed, protocol)
