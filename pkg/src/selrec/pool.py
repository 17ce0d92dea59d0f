"""Pool data model, covariate coding conventions and CSV ingestion.

A pool is the sampling frame: N individuals by d covariates, with an optional
outcome column. Binary covariates are coded -1/+1; continuous covariates are
typically rescaled so that their 0.05 and 0.95 quantiles land on -1 and +1.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateCovariate,
    EmptyFile,
    InvalidBinaryValue,
    MissingColumn,
    NonNumericCell,
    PoolError,
    SpecMismatch,
)

SCALING_QUANTILES = (0.05, 0.95)
MIN_DISTINCT_FOR_SCALING = 20

# Reserved CSV column names for outcomes.
BINARY_OUTCOME_COLUMN = "y"
TIME_COLUMN = "time"
EVENT_COLUMN = "event"


class CovariateKind(str, enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


class OutcomeKind(str, enum.Enum):
    BINARY = "binary"
    SURVIVAL = "survival"


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: CovariateKind

    def __post_init__(self):
        if not self.name:
            raise SpecMismatch("covariate name must be non-empty")
        object.__setattr__(self, "kind", CovariateKind(self.kind))
        if self.name in (BINARY_OUTCOME_COLUMN, TIME_COLUMN, EVENT_COLUMN):
            raise SpecMismatch(f"covariate name {self.name!r} is reserved for outcomes")

    @property
    def is_binary(self) -> bool:
        return self.kind is CovariateKind.BINARY


def binary(name: str) -> CovariateSpec:
    return CovariateSpec(name, CovariateKind.BINARY)


def continuous(name: str) -> CovariateSpec:
    return CovariateSpec(name, CovariateKind.CONTINUOUS)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BinaryOutcome:
    """Outcome y coded -1/+1."""

    y: np.ndarray

    kind = OutcomeKind.BINARY

    def __post_init__(self):
        y = _frozen(self.y)
        if y.ndim != 1:
            raise PoolError("binary outcome must be a vector")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise PoolError("binary outcome values must be -1 or +1")
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "BinaryOutcome":
        return BinaryOutcome(self.y[idx])


@dataclass(frozen=True, eq=False)
class SurvivalOutcome:
    """Right-censored survival times; ``event`` is True when death was observed."""

    time: np.ndarray
    event: np.ndarray

    kind = OutcomeKind.SURVIVAL

    def __post_init__(self):
        time = _frozen(self.time)
        event = _frozen(self.event, dtype=bool)
        if time.ndim != 1 or time.shape != event.shape:
            raise PoolError("time and event must be vectors of equal length")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise PoolError("survival times must be finite and strictly positive")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return len(self.time)

    def take(self, idx) -> "SurvivalOutcome":
        return SurvivalOutcome(self.time[idx], self.event[idx])


Outcome = BinaryOutcome | SurvivalOutcome


@dataclass(frozen=True, eq=False)
class Pool:
    """N individuals by d covariates, immutable once built."""

    specs: tuple[CovariateSpec, ...]
    records: np.ndarray
    outcome: Outcome | None = None

    def __post_init__(self):
        specs = tuple(self.specs)
        object.__setattr__(self, "specs", specs)
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise SpecMismatch(f"duplicate covariate names in {names}")
        X = _frozen(self.records)
        if X.ndim == 1 and len(specs) == 1:
            X = _frozen(X[:, None])
        if X.ndim != 2 or X.shape[1] != len(specs):
            raise SpecMismatch(
                f"records have shape {X.shape}, expected (N, {len(specs)})"
            )
        if X.shape[0] < 1:
            raise PoolError("a pool needs at least one record")
        if not np.all(np.isfinite(X)):
            raise PoolError("pool records contain missing or non-finite values")
        for j, s in enumerate(specs):
            if s.is_binary and not np.all((X[:, j] == 1.0) | (X[:, j] == -1.0)):
                raise PoolError(f"binary covariate {s.name!r} has values other than -1/+1")
        object.__setattr__(self, "records", X)
        if self.outcome is not None and len(self.outcome) != X.shape[0]:
            raise PoolError("outcome length does not match the number of records")

    # -- shape and lookup --------------------------------------------------

    @property
    def N(self) -> int:
        return self.records.shape[0]

    @property
    def d(self) -> int:
        return self.records.shape[1]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def binary_names(self) -> list[str]:
        return [s.name for s in self.specs if s.is_binary]

    @property
    def continuous_names(self) -> list[str]:
        return [s.name for s in self.specs if not s.is_binary]

    def spec(self, name: str) -> CovariateSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise MissingColumn(f"pool has no covariate named {name!r}")

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingColumn(f"pool has no covariate named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self.index(name)]

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        if names is None:
            return self.records
        return self.records[:, [self.index(n) for n in names]]

    # -- derived pools -----------------------------------------------------

    def take(self, idx) -> "Pool":
        idx = np.asarray(idx)
        outcome = self.outcome.take(idx) if self.outcome is not None else None
        return Pool(self.specs, self.records[idx], outcome)

    def select_covariates(self, names: Sequence[str]) -> "Pool":
        cols = [self.index(n) for n in names]
        return Pool(tuple(self.specs[j] for j in cols), self.records[:, cols], self.outcome)

    def drop(self, names: Iterable[str]) -> "Pool":
        names = set(names)
        for n in names:
            self.index(n)
        return self.select_covariates([n for n in self.names if n not in names])

    def with_outcome(self, outcome: Outcome | None) -> "Pool":
        return Pool(self.specs, self.records, outcome)


# ---------------------------------------------------------------------------
# CSV ingestion and canonical serialization
# ---------------------------------------------------------------------------


def _parse_float(text, row, col, path):
    try:
        v = float(text)
    except ValueError:
        raise NonNumericCell(row, col, text, path) from None
    if not math.isfinite(v):
        raise NonNumericCell(row, col, text, path)
    return v


def ingest_csv(
    path: str | os.PathLike,
    specs: Sequence[CovariateSpec],
    outcome_kind: OutcomeKind | str | None = None,
) -> Pool:
    """Read a pool from a UTF-8 CSV file with a header row.

    Covariate columns are matched by name, in any order. Outcome columns are
    ``y`` for binary outcomes and ``time``/``event`` for survival outcomes;
    they must be present exactly when ``outcome_kind`` is given. Columns that
    are neither covariates nor outcomes are ignored. Row numbers in error
    messages are 1-based file line numbers.
    """
    path = os.fspath(path)
    specs = tuple(specs)
    kind = OutcomeKind(outcome_kind) if outcome_kind is not None else None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        if not any(header):
            raise EmptyFile(f"{path}: header row is empty")
        pos = {h: j for j, h in enumerate(header)}

        missing = [s.name for s in specs if s.name not in pos]
        if missing:
            raise MissingColumn(f"{path}: missing covariate column(s) {missing}")
        outcome_cols = {
            None: [],
            OutcomeKind.BINARY: [BINARY_OUTCOME_COLUMN],
            OutcomeKind.SURVIVAL: [TIME_COLUMN, EVENT_COLUMN],
        }[kind]
        missing = [c for c in outcome_cols if c not in pos]
        if missing:
            raise MissingColumn(f"{path}: missing outcome column(s) {missing}")
        if kind is None:
            stray = [c for c in (BINARY_OUTCOME_COLUMN, TIME_COLUMN, EVENT_COLUMN) if c in pos]
            if stray:
                raise SpecMismatch(
                    f"{path}: outcome column(s) {stray} present but no outcome kind given"
                )

        rows, ys, times, events = [], [], [], []
        for line_no, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                raise PoolError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(fields)}"
                )
            rec = []
            for s in specs:
                text = fields[pos[s.name]].strip()
                v = _parse_float(text, line_no, s.name, path)
                if s.is_binary and v not in (-1.0, 1.0):
                    raise InvalidBinaryValue(line_no, s.name, text, path)
                rec.append(v)
            rows.append(rec)
            if kind is OutcomeKind.BINARY:
                text = fields[pos[BINARY_OUTCOME_COLUMN]].strip()
                v = _parse_float(text, line_no, BINARY_OUTCOME_COLUMN, path)
                if v not in (-1.0, 1.0):
                    raise InvalidBinaryValue(line_no, BINARY_OUTCOME_COLUMN, text, path)
                ys.append(v)
            elif kind is OutcomeKind.SURVIVAL:
                text = fields[pos[TIME_COLUMN]].strip()
                t = _parse_float(text, line_no, TIME_COLUMN, path)
                if t <= 0:
                    raise PoolError(f"{path}:{line_no}: survival time must be positive, got {text!r}")
                times.append(t)
                text = fields[pos[EVENT_COLUMN]].strip()
                e = _parse_float(text, line_no, EVENT_COLUMN, path)
                if e not in (0.0, 1.0):
                    raise InvalidBinaryValue(line_no, EVENT_COLUMN, text, path)
                events.append(e == 1.0)

    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    X = np.array(rows, dtype=float).reshape(len(rows), len(specs))
    outcome = None
    if kind is OutcomeKind.BINARY:
        outcome = BinaryOutcome(np.array(ys))
    elif kind is OutcomeKind.SURVIVAL:
        outcome = SurvivalOutcome(np.array(times), np.array(events))
    return Pool(specs, X, outcome)


def format_value(v: float) -> str:
    """Shortest decimal text that round-trips to the same double."""
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_csv(pool: Pool, dest: str | os.PathLike | io.TextIOBase) -> None:
    """Write ``pool`` in canonical form: covariates in spec order, then outcomes."""
    header = pool.names
    cols = [pool.records[:, j] for j in range(pool.d)]
    if isinstance(pool.outcome, BinaryOutcome):
        header = header + [BINARY_OUTCOME_COLUMN]
        cols.append(pool.outcome.y)
    elif isinstance(pool.outcome, SurvivalOutcome):
        header = header + [TIME_COLUMN, EVENT_COLUMN]
        cols.extend([pool.outcome.time, pool.outcome.event.astype(float)])

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(pool.N):
            w.writerow([format_value(c[i]) for c in cols])

    if isinstance(dest, io.TextIOBase):
        _write(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            _write(fh)


# ---------------------------------------------------------------------------
# Quantile scaling
# ---------------------------------------------------------------------------


def quantile(x, q):
    """Linear interpolation between order statistics (Hyndman-Fan type 7)."""
    return np.quantile(np.asarray(x, dtype=float), q, method="linear")


@dataclass(frozen=True)
class ScalingTransform:
    """Per-covariate affine maps x -> a*x + b."""

    params: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def inverse(self) -> "ScalingTransform":
        return ScalingTransform({k: (1.0 / a, -b / a) for k, (a, b) in self.params.items()})

    def __contains__(self, name):
        return name in self.params


def fit_scaling(pool: Pool) -> ScalingTransform:
    """Affine maps sending each continuous covariate's 0.05/0.95 quantiles to -1/+1."""
    lo_q, hi_q = SCALING_QUANTILES
    params = {}
    for name in pool.continuous_names:
        x = pool.column(name)
        if len(np.unique(x)) < MIN_DISTINCT_FOR_SCALING:
            raise DegenerateCovariate(
                f"covariate {name!r} has fewer than {MIN_DISTINCT_FOR_SCALING} distinct values"
            )
        lo, hi = quantile(x, [lo_q, hi_q])
        if hi <= lo:
            raise DegenerateCovariate(f"covariate {name!r} has equal 0.05 and 0.95 quantiles")
        a = 2.0 / (hi - lo)
        b = -(hi + lo) / (hi - lo)
        params[name] = (float(a), float(b))
    return ScalingTransform(params)


def apply_scaling(pool: Pool, t: ScalingTransform) -> Pool:
    for name in t.params:
        if pool.spec(name).is_binary:
            raise SpecMismatch(f"scaling given for binary covariate {name!r}")
    missing = [n for n in pool.continuous_names if n not in t]
    if missing:
        raise SpecMismatch(f"scaling transform does not cover {missing}")
    X = np.array(pool.records, copy=True)
    for name, (a, b) in t.params.items():
        j = pool.index(name)
        X[:, j] = a * X[:, j] + b
    return Pool(pool.specs, X, pool.outcome)
