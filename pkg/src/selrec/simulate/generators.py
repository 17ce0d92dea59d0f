"""Synthetic pools and outcome generators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtri

from ..errors import DimensionMismatch, InvalidConfig
from ..pool import BinaryOutcome, CovariateSpec, CovariateKind, Pool, SurvivalOutcome

# Stand-in for the two-binary pool distribution, cells ordered (--, -+, +-, ++)
# with the first covariate as the leading sign.
DEFAULT_CELLS = (0.15, 0.60, 0.15, 0.10)


def _check_prob(p, what):
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise InvalidConfig(f"{what} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class TwoBinary:
    cells: tuple[float, float, float, float] = DEFAULT_CELLS

    def __post_init__(self):
        cells = tuple(float(c) for c in self.cells)
        if len(cells) != 4:
            raise InvalidConfig("TwoBinary needs four cell probabilities")
        for c in cells:
            _check_prob(c, "cell probability")
        if abs(sum(cells) - 1.0) > 1e-9:
            raise InvalidConfig(f"cell probabilities sum to {sum(cells)}, not 1")
        object.__setattr__(self, "cells", cells)


@dataclass(frozen=True)
class OneBinary:
    p: float = 0.75

    def __post_init__(self):
        _check_prob(self.p, "p")


@dataclass(frozen=True)
class OneContinuous:
    mean: float = 0.0
    sd: float = 0.608

    def __post_init__(self):
        if not self.sd > 0:
            raise InvalidConfig("sd must be positive")


@dataclass(frozen=True)
class SyntheticEHR:
    """Mixed binary/continuous covariates coupled through a Gaussian copula.

    A latent multivariate normal with a seeded two-factor correlation matrix
    is thresholded at the given prevalences for binary covariates; continuous
    covariates are the latent normals themselves, exponentiated (log-normal)
    for the indices listed in ``lognormal``.
    """

    prevalence: tuple[float, ...]
    d_continuous: int
    correlation_seed: int = 0
    binary_names: tuple[str, ...] = ()
    continuous_names: tuple[str, ...] = ()
    lognormal: tuple[int, ...] = ()
    loading_scale: float = 0.45

    def __post_init__(self):
        prev = tuple(float(p) for p in self.prevalence)
        for p in prev:
            _check_prob(p, "prevalence")
        object.__setattr__(self, "prevalence", prev)
        if self.d_continuous < 0:
            raise InvalidConfig("d_continuous must be non-negative")
        if self.binary_names and len(self.binary_names) != len(prev):
            raise InvalidConfig("binary_names length must match prevalence")
        if self.continuous_names and len(self.continuous_names) != self.d_continuous:
            raise InvalidConfig("continuous_names length must match d_continuous")
        if not 0 <= self.loading_scale < 1 / math.sqrt(2):
            raise InvalidConfig("loading_scale must lie in [0, 1/sqrt(2))")
        for name in ("binary_names", "continuous_names", "lognormal"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def d_binary(self) -> int:
        return len(self.prevalence)

    def names(self) -> tuple[list[str], list[str]]:
        b = list(self.binary_names) or [f"b{j + 1}" for j in range(self.d_binary)]
        c = list(self.continuous_names) or [f"c{j + 1}" for j in range(self.d_continuous)]
        return b, c

    def correlation(self) -> np.ndarray:
        D = self.d_binary + self.d_continuous
        rng = np.random.default_rng(self.correlation_seed)
        L = rng.uniform(-self.loading_scale, self.loading_scale, size=(D, 2))
        corr = L @ L.T
        np.fill_diagonal(corr, 1.0)
        return corr


@dataclass(frozen=True)
class Logistic:
    w0: float
    w: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in np.atleast_1d(self.w)))


@dataclass(frozen=True)
class CoxExponential:
    beta: tuple[float, ...]
    baseline_rate: float
    censor_rate: float

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(v) for v in np.atleast_1d(self.beta)))
        if not self.baseline_rate > 0:
            raise InvalidConfig("baseline_rate must be positive")
        if not self.censor_rate >= 0:
            raise InvalidConfig("censor_rate must be non-negative")


CovariateScheme = TwoBinary | OneBinary | OneContinuous | SyntheticEHR
OutcomeScheme = Logistic | CoxExponential

_SCHEMES = {cls.__name__: cls for cls in (TwoBinary, OneBinary, OneContinuous, SyntheticEHR)}
_OUTCOMES = {cls.__name__: cls for cls in (Logistic, CoxExponential)}


@dataclass(frozen=True)
class GeneratorConfig:
    pool_size: int
    covariates: CovariateScheme = field(default_factory=TwoBinary)
    outcome: OutcomeScheme | None = None

    def __post_init__(self):
        if int(self.pool_size) != self.pool_size or self.pool_size < 1:
            raise InvalidConfig("pool_size must be a positive integer")
        if not isinstance(self.covariates, tuple(_SCHEMES.values())):
            raise InvalidConfig(f"unknown covariate scheme {self.covariates!r}")
        if self.outcome is not None and not isinstance(self.outcome, tuple(_OUTCOMES.values())):
            raise InvalidConfig(f"unknown outcome scheme {self.outcome!r}")

    def to_dict(self) -> dict:
        out = {
            "pool_size": int(self.pool_size),
            "covariates": {"scheme": type(self.covariates).__name__, **_plain(asdict(self.covariates))},
            "outcome": None,
        }
        if self.outcome is not None:
            out["outcome"] = {"scheme": type(self.outcome).__name__, **_plain(asdict(self.outcome))}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        try:
            cov = dict(data["covariates"])
            scheme = _SCHEMES[cov.pop("scheme")]
            outcome = None
            if data.get("outcome"):
                out = dict(data["outcome"])
                outcome = _OUTCOMES[out.pop("scheme")](**out)
            return cls(int(data["pool_size"]), scheme(**cov), outcome)
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"malformed generator config: {exc}") from None


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def scheme_names(sch: CovariateScheme) -> list[str]:
    if isinstance(sch, TwoBinary):
        return ["x1", "x2"]
    if isinstance(sch, (OneBinary, OneContinuous)):
        return ["x1"]
    b, c = sch.names()
    return b + c


def gen_pool(config: GeneratorConfig, seed: int) -> Pool:
    """Draw ``pool_size`` i.i.d. covariate records; outcomes are attached separately."""
    rng = np.random.default_rng(seed)
    N = int(config.pool_size)
    sch = config.covariates
    B, C = CovariateKind.BINARY, CovariateKind.CONTINUOUS
    if isinstance(sch, TwoBinary):
        cell = rng.choice(4, size=N, p=np.array(sch.cells))
        X = np.column_stack([np.where(cell >= 2, 1.0, -1.0), np.where(cell % 2 == 1, 1.0, -1.0)])
        specs = (CovariateSpec("x1", B), CovariateSpec("x2", B))
    elif isinstance(sch, OneBinary):
        X = np.where(rng.random(N) < sch.p, 1.0, -1.0)[:, None]
        specs = (CovariateSpec("x1", B),)
    elif isinstance(sch, OneContinuous):
        X = rng.normal(sch.mean, sch.sd, size=N)[:, None]
        specs = (CovariateSpec("x1", C),)
    else:
        bnames, cnames = sch.names()
        chol = np.linalg.cholesky(sch.correlation())
        Z = rng.standard_normal((N, chol.shape[0])) @ chol.T
        db = sch.d_binary
        thresholds = ndtri(np.array(sch.prevalence))
        Xb = np.where(Z[:, :db] < thresholds, 1.0, -1.0)
        Xc = Z[:, db:].copy()
        for j in sch.lognormal:
            Xc[:, j] = np.exp(0.5 * Xc[:, j])
        X = np.column_stack([Xb, Xc])
        specs = tuple(CovariateSpec(n, B) for n in bnames) + tuple(CovariateSpec(n, C) for n in cnames)
    return Pool(specs, X)


def _coef(pool: Pool, w: Sequence[float]) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w.shape != (pool.d,):
        raise DimensionMismatch(f"expected {pool.d} coefficients, got {w.size}")
    return w


def logistic_probability(x, w0: float, w) -> np.ndarray:
    """P(y=+1 | x) = 1 / (1 + exp(-w0 - w.x))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return expit(w0 + x @ np.atleast_1d(np.asarray(w, dtype=float)))


def gen_logistic_outcomes(pool: Pool, w0: float, w, seed: int) -> Pool:
    w = _coef(pool, w)
    rng = np.random.default_rng(seed)
    p = expit(w0 + pool.records @ w)
    y = np.where(rng.random(pool.N) < p, 1.0, -1.0)
    return pool.with_outcome(BinaryOutcome(y))


def gen_survival_outcomes(pool: Pool, beta, baseline_rate: float, censor_rate: float, seed: int) -> Pool:
    """Exponential event times with rate baseline*exp(beta.x), exponential censoring."""
    beta = _coef(pool, beta)
    if not baseline_rate > 0:
        raise InvalidConfig("baseline_rate must be positive")
    if not censor_rate >= 0:
        raise InvalidConfig("censor_rate must be non-negative")
    rng = np.random.default_rng(seed)
    rate = baseline_rate * np.exp(pool.records @ beta)
    t_event = rng.standard_exponential(pool.N) / rate
    if censor_rate > 0:
        t_censor = rng.standard_exponential(pool.N) / censor_rate
    else:
        t_censor = np.full(pool.N, np.inf)
    time = np.minimum(t_event, t_censor)
    time = np.maximum(time, np.finfo(float).tiny)
    return pool.with_outcome(SurvivalOutcome(time, t_event <= t_censor))


def gen_study_pool(config: GeneratorConfig, seed: int) -> Pool:
    """Covariates plus outcomes from ``config.outcome``, with independent streams."""
    pool_seed, outcome_seed = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    pool = gen_pool(config, int(pool_seed))
    return attach_outcomes(pool, config.outcome, int(outcome_seed))


def attach_outcomes(pool: Pool, outcome: OutcomeScheme | None, seed: int) -> Pool:
    if outcome is None:
        return pool
    if isinstance(outcome, Logistic):
        return gen_logistic_outcomes(pool, outcome.w0, outcome.w, seed)
    return gen_survival_outcomes(pool, outcome.beta, outcome.baseline_rate, outcome.censor_rate, seed)
