"""Simulated prospective study on an EHR-like pool with survival outcomes.

The pool is fitted once in full (the reference Cox model), then split at
random into disjoint sub-pools. From each sub-pool one cohort is recruited
selectively (product weights over all covariates) and one at random; each
cohort gets its own Cox fit, compared against the reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from ..errors import InvalidConfig, PoolError
from ..models import FittedModel, fit_cox, significance
from ..pool import Pool, SurvivalOutcome, apply_scaling, fit_scaling, quantile
from ..recruit import Protocol, pool_weights, random_select, sample_cohort
from .generators import CoxExponential, GeneratorConfig, SyntheticEHR, gen_study_pool

SELECTIVE = "selective"
RANDOM = "random"

EHR_POOL_SIZE = 82_080

# Prevalences loosely follow a stable coronary disease population; the
# rarest is kept near 5% so random cohorts of 1,000 still see events in
# every stratum.
EHR_BINARY = (
    ("male", 0.57, 0.10),
    ("smoker", 0.20, 0.12),
    ("hypertension", 0.881, 0.02),
    ("diabetes", 0.154, 0.14),
    ("nitrates", 0.268, 0.045),
    ("heart_failure", 0.09, 0.25),
    ("pad", 0.07, 0.17),
    ("af", 0.116, 0.16),
    ("stroke", 0.054, 0.22),
    ("ckd", 0.067, 0.17),
    ("copd", 0.351, 0.065),
    ("cancer", 0.08, 0.23),
    ("depression", 0.191, 0.06),
    ("anxiety", 0.12, -0.065),
    ("pci", 0.046, -0.07),
)
EHR_CONTINUOUS = (
    ("age", 0.75),
    ("sbp", 0.0),
    ("dbp", -0.05),
    ("chol", 0.0),
    ("hdl", 0.0),
    ("crea", 0.05),
    ("wbc", 0.06),
    ("haemo", -0.09),
)
EHR_LOGNORMAL = (5, 6)  # crea, wbc
EHR_BASELINE_RATE = 0.07
EHR_CENSOR_RATE = 0.1


def ehr_generator(pool_size: int = EHR_POOL_SIZE, correlation_seed: int = 2019) -> GeneratorConfig:
    scheme = SyntheticEHR(
        prevalence=tuple(p for _, p, _ in EHR_BINARY),
        d_continuous=len(EHR_CONTINUOUS),
        correlation_seed=correlation_seed,
        binary_names=tuple(n for n, _, _ in EHR_BINARY),
        continuous_names=tuple(n for n, _ in EHR_CONTINUOUS),
        lognormal=EHR_LOGNORMAL,
    )
    beta = tuple(b for _, _, b in EHR_BINARY) + tuple(b for _, b in EHR_CONTINUOUS)
    return GeneratorConfig(pool_size, scheme, CoxExponential(beta, EHR_BASELINE_RATE, EHR_CENSOR_RATE))


def synthetic_ehr_pool(seed: int, gen: GeneratorConfig | None = None, scale: bool = True) -> Pool:
    """Synthetic stand-in pool; continuous covariates scaled on the full pool."""
    pool = gen_study_pool(gen or ehr_generator(), seed)
    return apply_scaling(pool, fit_scaling(pool)) if scale else pool


@dataclass(frozen=True)
class CohortEvaluation:
    subpool: int
    protocol: str
    recovered: int
    missed: int
    spurious: int
    mse: float
    balance_ratio_median: float
    balance_ratios: dict[str, float]
    ks_in_band: dict[str, float]
    coefficients: np.ndarray = field(repr=False)

    @property
    def ks_in_band_mean(self) -> float:
        return float(np.mean(list(self.ks_in_band.values()))) if self.ks_in_band else float("nan")


@dataclass
class EhrStudyResult:
    reference: FittedModel
    reference_significant: np.ndarray
    alpha: float
    cohort_n: int
    subpool_size: int
    evaluations: list[CohortEvaluation]

    @property
    def n_subpools(self) -> int:
        return len({e.subpool for e in self.evaluations})

    def by_protocol(self, protocol: str) -> list[CohortEvaluation]:
        return [e for e in self.evaluations if e.protocol == protocol]

    def metric(self, protocol: str, metric: str) -> np.ndarray:
        """Per-sub-pool values of ``metric`` in sub-pool order."""
        return np.array([getattr(e, metric) for e in self.by_protocol(protocol)], dtype=float)

    METRICS = ("recovered", "missed", "spurious", "mse", "balance_ratio_median", "ks_in_band_mean")

    def to_records(self):
        rows = []
        for protocol in (SELECTIVE, RANDOM):
            for metric in self.METRICS:
                v = self.metric(protocol, metric)
                se = float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
                rows.append((protocol, self.cohort_n, metric, float(np.mean(v)), se, len(v)))
        return rows


def balance_ratio(column) -> float:
    """Count of the rarer binary value over the count of the commoner one."""
    column = np.asarray(column)
    plus = int(np.count_nonzero(column > 0))
    minus = column.size - plus
    hi = max(plus, minus)
    return min(plus, minus) / hi if hi else float("nan")


def in_band_ks(cohort_values, pool_values) -> float:
    """KS distance of cohort members inside the pool's 0.05-0.95 band to a uniform on it."""
    lo, hi = quantile(pool_values, [0.05, 0.95])
    v = np.asarray(cohort_values)
    v = v[(v >= lo) & (v <= hi)]
    if v.size == 0:
        return float("nan")
    return float(stats.kstest(v, "uniform", args=(lo, hi - lo)).statistic)


def _evaluate(k, protocol, sub: Pool, idx, reference, ref_sig, alpha) -> CohortEvaluation:
    cohort = sub.take(idx)
    out = cohort.outcome
    m = fit_cox(cohort.records, out.time, out.event, cohort.names)
    sig = significance(m, alpha).significant
    ratios = {n: balance_ratio(cohort.column(n)) for n in sub.binary_names}
    ks = {n: in_band_ks(cohort.column(n), sub.column(n)) for n in sub.continuous_names}
    return CohortEvaluation(
        subpool=k,
        protocol=protocol,
        recovered=int(np.sum(sig & ref_sig)),
        missed=int(np.sum(~sig & ref_sig)),
        spurious=int(np.sum(sig & ~ref_sig)),
        mse=float(np.mean((m.coefficients - reference.coefficients) ** 2)),
        balance_ratio_median=float(np.median(list(ratios.values()))) if ratios else float("nan"),
        balance_ratios=ratios,
        ks_in_band=ks,
        coefficients=m.coefficients,
    )


def run_ehr_study(
    pool: Pool,
    n_subpools: int = 10,
    cohort_n: int = 1000,
    alpha: float = 0.05,
    master_seed: int = 0,
    covariates: Sequence[str] | None = None,
) -> EhrStudyResult:
    if not isinstance(pool.outcome, SurvivalOutcome):
        raise PoolError("the EHR study needs a pool with survival outcomes")
    if n_subpools < 1:
        raise InvalidConfig("n_subpools must be positive")
    size = pool.N // n_subpools
    if size < 1 or cohort_n > size:
        raise InvalidConfig(f"cohort_n={cohort_n} exceeds the sub-pool size {size}")
    if covariates is not None:
        pool = pool.select_covariates(covariates)

    out = pool.outcome
    reference = fit_cox(pool.records, out.time, out.event, pool.names)
    ref_sig = significance(reference, alpha).significant

    # Child streams only; the root stream of master_seed is left to pool generation.
    perm = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(0,))).permutation(pool.N)
    evaluations = []
    for k in range(n_subpools):
        sub = pool.take(np.sort(perm[k * size:(k + 1) * size]))
        sel_seed, rnd_seed = (int(s) for s in np.random.SeedSequence(
            master_seed, spawn_key=(1, k)).generate_state(2, dtype=np.uint64))
        sel = sample_cohort(pool_weights(sub), cohort_n, sel_seed, Protocol.MIXED)
        rnd = random_select(sub.N, cohort_n, rnd_seed)
        evaluations.append(_evaluate(k, SELECTIVE, sub, sel.indices, reference, ref_sig, alpha))
        evaluations.append(_evaluate(k, RANDOM, sub, rnd.indices, reference, ref_sig, alpha))
    return EhrStudyResult(reference, ref_sig, alpha, cohort_n, size, evaluations)
