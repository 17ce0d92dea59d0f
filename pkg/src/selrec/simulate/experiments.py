"""Monte-Carlo harness: power, MSE, type-I error and bias by protocol and cohort size.

Every replication draws a pool with outcomes, then for each protocol and
cohort size selects a cohort, fits a logistic regression and records the
coefficient estimates and Wald p-values. Seeds for replication r are derived
from ``SeedSequence(master_seed, spawn_key=(r,))`` so results do not depend on
how replications are scheduled across workers.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ExcessiveFitFailures, FitError, InvalidConfig
from ..models import fit_logistic
from ..recruit import Protocol, joint_balance_select, pool_weights, random_select, sample_cohort
from .generators import (
    GeneratorConfig,
    Logistic,
    OneBinary,
    TwoBinary,
    attach_outcomes,
    gen_pool,
    scheme_names,
)

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05
MIN_REPLICATIONS = 100


@dataclass(frozen=True)
class Scenario:
    """One data-generating setup and the protocols compared on it.

    ``drop`` lists covariates removed after outcomes are generated; they are
    neither used for selection nor included in the fitted model.
    """

    label: str
    gen: GeneratorConfig
    protocols: tuple[Protocol, ...]
    drop: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.gen.outcome, Logistic):
            raise InvalidConfig("power experiments need a Logistic outcome scheme")
        object.__setattr__(self, "protocols", tuple(Protocol(p) for p in self.protocols))

    def cell_label(self, protocol: Protocol) -> str:
        return protocol.value if not self.label else f"{protocol.value}-{self.label}"


@dataclass(frozen=True)
class CellSummary:
    """Aggregates for one (protocol, cohort size) cell."""

    replications: int
    failures: int
    power: float | None
    power_se: float | None
    power_per_param: float | None
    power_per_param_se: float | None
    mse: float
    mse_se: float
    type1: float | None
    type1_se: float | None
    bias: np.ndarray
    bias_se: np.ndarray

    @property
    def failure_rate(self) -> float:
        total = self.replications + self.failures
        return self.failures / total if total else 0.0


@dataclass
class ExperimentResult:
    name: str
    labels: tuple[str, ...]
    n_grid: tuple[int, ...]
    R: int
    alpha: float
    coefficient_names: dict[str, tuple[str, ...]]
    cells: dict[tuple[str, int], CellSummary] = field(default_factory=dict)

    def cell(self, label: str, n: int) -> CellSummary:
        return self.cells[(label, int(n))]

    def curve(self, label: str, metric: str) -> tuple[np.ndarray, np.ndarray]:
        """Values and Monte-Carlo standard errors of ``metric`` across the grid."""
        vals, ses = [], []
        for n in self.n_grid:
            c = self.cell(label, n)
            vals.append(getattr(c, metric))
            ses.append(getattr(c, metric + "_se"))
        return np.array(vals, dtype=float), np.array(ses, dtype=float)

    def to_records(self) -> list[tuple[str, int, str, float, float, int]]:
        """Long-format rows (protocol, n, metric, value, mc_se, replications)."""
        rows = []
        for label in self.labels:
            names = self.coefficient_names[label]
            for n in self.n_grid:
                c = self.cell(label, n)
                R_ok = c.replications
                for metric in ("power", "power_per_param", "mse", "type1"):
                    v = getattr(c, metric)
                    if v is not None:
                        rows.append((label, n, metric, float(v), float(getattr(c, metric + "_se")), R_ok))
                for name, b, se in zip(names, c.bias, c.bias_se):
                    rows.append((label, n, f"bias_{name}", float(b), float(se), R_ok))
                f = c.failure_rate
                total = c.replications + c.failures
                rows.append((label, n, "fit_failure_rate", f, math.sqrt(f * (1 - f) / total), total))
        return rows


# ---------------------------------------------------------------------------
# Replication worker
# ---------------------------------------------------------------------------


def _cohort(pool, protocol, n, seed, cache):
    if protocol is Protocol.RANDOM:
        return random_select(pool.N, n, seed)
    if protocol is Protocol.JOINT:
        return joint_balance_select(pool, pool.binary_names, n, seed)
    if protocol not in cache:
        cache[protocol] = pool_weights(pool)
    return sample_cohort(cache[protocol], n, seed, protocol)


def _replicate(args):
    scenario, n_grid, alpha, master_seed, key, fixed_pool, reps = args
    P, G = len(scenario.protocols), len(n_grid)
    outcome = scenario.gen.outcome
    d = len(outcome.w) - len(scenario.drop)
    est = np.full((len(reps), P, G, d + 1), np.nan)
    pval = np.full((len(reps), P, G, d + 1), np.nan)
    fixed = None
    if fixed_pool:
        seed = np.random.SeedSequence(master_seed, spawn_key=key).generate_state(1, dtype=np.uint64)[0]
        fixed = gen_pool(scenario.gen, int(seed))
    for i, r in enumerate(reps):
        seeds = np.random.SeedSequence(master_seed, spawn_key=key + (int(r),)).generate_state(
            2 + P * G, dtype=np.uint64
        )
        pool = fixed if fixed is not None else gen_pool(scenario.gen, int(seeds[0]))
        pool = attach_outcomes(pool, outcome, int(seeds[1]))
        if scenario.drop:
            pool = pool.drop(scenario.drop)
        y = pool.outcome.y
        cache = {}
        for a, protocol in enumerate(scenario.protocols):
            for b, n in enumerate(n_grid):
                cohort = _cohort(pool, protocol, n, int(seeds[2 + a * G + b]), cache)
                idx = cohort.indices
                try:
                    m = fit_logistic(pool.records[idx], y[idx], pool.names)
                except FitError:
                    continue
                est[i, a, b] = m.coefficients
                pval[i, a, b] = m.p_values
    return est, pval


def _summarise(est, pval, truth, alpha) -> CellSummary:
    ok = ~np.isnan(est[:, 0])
    R_ok, failures = int(ok.sum()), int((~ok).sum())
    e, p = est[ok][:, 1:], pval[ok][:, 1:]
    t = truth[1:]
    sig = p < alpha
    nonzero, zero = t != 0, t == 0

    def prop(x):
        v = float(np.mean(x))
        return v, math.sqrt(v * (1 - v) / len(x))

    def mean_se(x):
        return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0

    if R_ok == 0:
        nan, d = float("nan"), len(t)
        a, b = (nan if nonzero.any() else None), (nan if zero.any() else None)
        return CellSummary(0, failures, a, a, a, a, nan, nan, b, b, np.full(d, nan), np.full(d, nan))
    power = power_se = ppp = ppp_se = type1 = type1_se = None
    if nonzero.any():
        power, power_se = prop(sig[:, nonzero].all(axis=1))
        ppp, ppp_se = mean_se(sig[:, nonzero].mean(axis=1))
    if zero.any():
        type1, type1_se = prop(sig[:, zero].ravel())
    mse, mse_se = mean_se(((e - t) ** 2).mean(axis=1))
    err = e - t
    bias = err.mean(axis=0)
    bias_se = err.std(axis=0, ddof=1) / math.sqrt(R_ok) if R_ok > 1 else np.zeros(len(t))
    return CellSummary(R_ok, failures, power, power_se, ppp, ppp_se, mse, mse_se,
                       type1, type1_se, bias, bias_se)


def run_scenarios(
    name: str,
    scenarios: Sequence[Scenario],
    n_grid: Sequence[int],
    R: int,
    alpha: float = 0.05,
    master_seed: int = 0,
    fixed_pool: bool = False,
    threads: int = 1,
    max_failure_rate: float = MAX_FAILURE_RATE,
) -> ExperimentResult:
    n_grid = tuple(int(n) for n in n_grid)
    if R < 1:
        raise InvalidConfig("R must be at least 1")
    if R < MIN_REPLICATIONS:
        warnings.warn(f"R={R} is below {MIN_REPLICATIONS}; Monte-Carlo errors will be large",
                      stacklevel=2)
    if not 0 < alpha < 1:
        raise InvalidConfig("alpha must lie in (0, 1)")
    for sc in scenarios:
        if max(n_grid) > sc.gen.pool_size:
            raise InvalidConfig(f"cohort size {max(n_grid)} exceeds pool size {sc.gen.pool_size}")

    labels, names, cells = [], {}, {}
    for s_idx, sc in enumerate(scenarios):
        key = () if len(scenarios) == 1 else (s_idx,)
        chunks = [c for c in np.array_split(np.arange(R), max(1, threads) * 4) if len(c)]
        tasks = [(sc, n_grid, alpha, master_seed, key, fixed_pool, c) for c in chunks]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as ex:
                parts = list(ex.map(_replicate, tasks))
        else:
            parts = [_replicate(t) for t in tasks]
        est = np.concatenate([p[0] for p in parts])
        pval = np.concatenate([p[1] for p in parts])

        full_names = scheme_names(sc.gen.covariates)
        kept = [j for j, nm in enumerate(full_names) if nm not in sc.drop]
        w = np.asarray(sc.gen.outcome.w)
        truth = np.concatenate([[sc.gen.outcome.w0], w[kept]])
        for a, protocol in enumerate(sc.protocols):
            label = sc.cell_label(protocol)
            labels.append(label)
            names[label] = tuple(full_names[j] for j in kept)
            for b, n in enumerate(n_grid):
                c = _summarise(est[:, a, b], pval[:, a, b], truth, alpha)
                cells[(label, n)] = c
                if c.failure_rate > max_failure_rate:
                    raise ExcessiveFitFailures(
                        f"{label} at n={n}: {c.failures} of {R} fits failed "
                        f"(rate {c.failure_rate:.3f} > {max_failure_rate})"
                    )
                if c.failures:
                    log.info("%s n=%d: %d failed fits excluded", label, n, c.failures)
    return ExperimentResult(name, tuple(labels), n_grid, R, alpha, names, cells)


def run_power_experiment(
    gen: GeneratorConfig,
    protocols: Sequence[Protocol | str],
    n_grid: Sequence[int],
    R: int,
    alpha: float = 0.05,
    master_seed: int = 0,
    fixed_pool: bool = False,
    threads: int = 1,
    name: str = "power",
) -> ExperimentResult:
    """Power, MSE and type-I error of each protocol across cohort sizes.

    Power is the fraction of successful replications in which every truly
    nonzero slope is significant at ``alpha``; the per-parameter average is
    reported alongside as ``power_per_param``. Fits that fail are excluded and
    counted; a failure rate above 5% in any cell aborts the run.
    """
    sc = Scenario("", gen, tuple(protocols))
    return run_scenarios(name, [sc], n_grid, R, alpha, master_seed, fixed_pool, threads)


UNMEASURED_W0 = -1.0 / 6.0
UNMEASURED_W = (-1.0 / 3.0, 1.0 / 4.0)


def unmeasured_scenarios(pool_size=10_000, cells=TwoBinary().cells, control_p=0.75):
    confounded = GeneratorConfig(pool_size, TwoBinary(cells), Logistic(UNMEASURED_W0, UNMEASURED_W))
    control = GeneratorConfig(pool_size, OneBinary(control_p), Logistic(UNMEASURED_W0, UNMEASURED_W[:1]))
    prot = (Protocol.JOINT, Protocol.RANDOM)
    return [Scenario("", confounded, prot, drop=("x2",)), Scenario("control", control, prot)]


def run_unmeasured_covariate_experiment(
    R: int,
    n_grid: Sequence[int],
    master_seed: int = 0,
    alpha: float = 0.05,
    threads: int = 1,
    pool_size: int = 10_000,
    cells: Sequence[float] = TwoBinary().cells,
) -> ExperimentResult:
    """Bias of the x1 slope when x2 is generated but never observed.

    Labels ``joint``/``random`` are the confounded runs; ``joint-control`` and
    ``random-control`` use a single-covariate pool with no omitted variable.
    """
    return run_scenarios("unmeasured", unmeasured_scenarios(pool_size, tuple(cells)),
                         n_grid, R, alpha, master_seed, False, threads)
