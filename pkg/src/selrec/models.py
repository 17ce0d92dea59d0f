"""Maximum-likelihood fits with Wald inference: logistic regression and Cox PH.

Both fitters run damped Newton-Raphson on the exact log-likelihood and
report the inverse observed information as the coefficient covariance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit, ndtr, ndtri

from .errors import (
    DidNotConverge,
    InvalidModelInput,
    MonotoneLikelihood,
    NoEvents,
    SeparationDetected,
    SingularInformation,
    UnconvergedModel,
)

SCORE_TOL = 1e-8
STEP_TOL = 1e-6
MAX_ITER = 50
MAX_HALVINGS = 10
DIVERGENCE_BOUND = 50.0
P_VALUE_FLOOR = 1e-300
INTERCEPT = "(intercept)"


class ModelKind(str, enum.Enum):
    LOGISTIC = "logistic"
    COX = "cox"


def wald_p_values(z) -> np.ndarray:
    p = 2.0 * ndtr(-np.abs(np.asarray(z, dtype=float)))
    p[p < P_VALUE_FLOOR] = 0.0
    return p


@dataclass(frozen=True, eq=False)
class FittedModel:
    kind: ModelKind
    names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    wald_z: np.ndarray
    p_values: np.ndarray
    converged: bool
    iterations: int
    loglik: float

    @classmethod
    def from_estimates(cls, kind, names, coef, cov, converged, iterations, loglik):
        cov = 0.5 * (cov + cov.T)
        se = np.sqrt(np.diag(cov))
        z = coef / se
        return cls(ModelKind(kind), tuple(names), coef, cov, z, wald_p_values(z),
                   converged, iterations, float(loglik))

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def has_intercept(self) -> bool:
        return self.kind is ModelKind.LOGISTIC

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.names[1:] if self.has_intercept else self.names

    def covariate_slice(self, a) -> np.ndarray:
        return np.asarray(a)[1:] if self.has_intercept else np.asarray(a)

    def confidence_intervals(self, level: float = 0.95) -> np.ndarray:
        """Wald intervals, one (lower, upper) row per coefficient."""
        if not 0 < level < 1:
            raise ValueError("level must lie in (0, 1)")
        half = ndtri(0.5 + level / 2.0) * self.standard_errors
        return np.column_stack([self.coefficients - half, self.coefficients + half])


@dataclass(frozen=True)
class SignificanceReport:
    alpha: float
    names: tuple[str, ...]
    significant: np.ndarray


def significance(model: FittedModel, alpha: float = 0.05) -> SignificanceReport:
    """Per-covariate Wald significance; the logistic intercept is left out."""
    if not model.converged:
        raise UnconvergedModel("cannot test an unconverged fit")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    p = model.covariate_slice(model.p_values)
    return SignificanceReport(float(alpha), model.covariate_names, p < alpha)


# ---------------------------------------------------------------------------
# Newton-Raphson driver
# ---------------------------------------------------------------------------


def _newton(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    beta0: np.ndarray,
    diverged: type[Exception],
    linear_predictor: Callable[[np.ndarray], np.ndarray],
    max_iter: int = MAX_ITER,
    tol: float = SCORE_TOL,
):
    """Maximise ``objective`` which returns (loglik, score, information).

    Convergence needs both a small score and a small Newton step: along a
    direction where the likelihood keeps rising to an asymptote the score can
    fall below ``tol`` while each step stays near 1, and such fits should end
    in ``diverged`` rather than be reported as converged.
    """
    beta = beta0.astype(float, copy=True)
    ll, g, info = objective(beta)
    for it in range(max_iter + 1):
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            if np.max(np.abs(linear_predictor(beta)), initial=0.0) > 20:
                raise diverged("information became singular while the linear predictor diverged")
            raise SingularInformation("observed information matrix is singular")
        if np.max(np.abs(g)) < tol and np.max(np.abs(step)) < STEP_TOL:
            return beta, ll, info, it
        if it == max_iter:
            break
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            ll_new, g_new, info_new = objective(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise DidNotConverge("step halving failed to increase the likelihood")
        beta, ll, g, info = cand, ll_new, g_new, info_new
        if np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            raise diverged(f"coefficient magnitude exceeded {DIVERGENCE_BOUND:g}")
    raise DidNotConverge(f"no convergence after {max_iter} Newton iterations")


def _invert(info: np.ndarray) -> np.ndarray:
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformation("observed information matrix is singular") from None
    if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) <= 0):
        raise SingularInformation("observed information is not positive definite")
    return cov


def _check_design(X: np.ndarray, n_min: int):
    if X.ndim != 2:
        raise InvalidModelInput("X must be a 2-D matrix")
    n, d = X.shape
    if n < n_min:
        raise InvalidModelInput(f"need more than {n_min - 1} observations, got {n}")
    if not np.all(np.isfinite(X)):
        raise InvalidModelInput("X contains non-finite values")
    if d and np.any(np.ptp(X, axis=0) == 0):
        raise InvalidModelInput("X has a constant column")


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def logistic_loglik(w, A, y):
    """Log-likelihood, score and information for design ``A`` (intercept included).

    Written in terms of the -1/+1 labels so that every term depends on y*eta
    only; flipping the labels then flips the fit exactly.
    """
    eta = A @ w
    m = y * eta
    ll = float(np.sum(log_expit(m)))
    g = A.T @ (y * expit(-m))
    v = expit(eta) * expit(-eta)
    info = (A * v[:, None]).T @ A
    return ll, g, info


def fit_logistic(X, y, names: Sequence[str] | None = None) -> FittedModel:
    """Logistic regression of y in {-1,+1} on X with an intercept."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    _check_design(X, X.shape[1] + 2)
    if y.shape != (X.shape[0],) or not np.all((y == 1) | (y == -1)):
        raise InvalidModelInput("y must be a vector of -1/+1 matching X")
    if np.all(y == y[0]):
        raise InvalidModelInput("y contains a single class")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    A = _with_intercept(X)
    beta, ll, info, it = _newton(
        lambda w: logistic_loglik(w, A, y),
        np.zeros(A.shape[1]),
        SeparationDetected,
        lambda w: A @ w,
    )
    return FittedModel.from_estimates(
        ModelKind.LOGISTIC, [INTERCEPT] + names, beta, _invert(info), True, it, ll
    )


# ---------------------------------------------------------------------------
# Cox proportional hazards
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _RiskSets:
    """Sort order and tie structure of a survival sample, independent of beta."""

    X: np.ndarray          # centred covariates in ascending time order
    event: np.ndarray      # event indicator, same order
    risk_start: np.ndarray # first sorted index still at risk at each event time
    event_group: np.ndarray  # per-event group id (sorted order, events only)
    event_rows: np.ndarray   # sorted-row index of each event
    group_of_row: np.ndarray # number of event times <= each row's time, minus 1
    deaths: np.ndarray       # tied deaths per event time
    tie_frac: np.ndarray     # l / D_g for the l-th death of each tie group

    @classmethod
    def build(cls, X, time, event, ties: str) -> "_RiskSets":
        order = np.argsort(time, kind="stable")
        t = time[order]
        ev = event[order]
        Xs = X[order]
        Xs = Xs - Xs.mean(axis=0)
        event_times = np.unique(t[ev])
        deaths = np.searchsorted(event_times, t[ev])
        D = np.bincount(deaths, minlength=len(event_times))
        risk_start = np.searchsorted(t, event_times, side="left")
        group_of_row = np.searchsorted(event_times, t, side="right") - 1
        event_rows = np.flatnonzero(ev)
        # rows of the same tie group are contiguous, so a running count gives l
        starts = np.concatenate([[0], np.cumsum(D)[:-1]])
        l = np.arange(len(event_rows)) - np.repeat(starts, D)
        if ties == "efron":
            frac = l / np.repeat(D, D)
        elif ties == "breslow":
            frac = np.zeros(len(event_rows))
        else:
            raise ValueError(f"ties must be 'efron' or 'breslow', got {ties!r}")
        return cls(Xs, ev, risk_start, np.repeat(np.arange(len(D)), D), event_rows,
                   group_of_row, D, frac)


def _cox_objective(beta, rs: _RiskSets):
    X = rs.X
    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    # reverse cumulative sums give risk-set totals from each sorted row onwards
    S0r = np.cumsum(w[::-1])[::-1][rs.risk_start]
    S1r = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1][rs.risk_start]
    g_e = rs.event_group
    G = len(rs.deaths)
    w_ev = w[rs.event_rows]
    S0d = np.bincount(g_e, weights=w_ev, minlength=G)
    S1d = np.zeros((G, X.shape[1]))
    np.add.at(S1d, g_e, w_ev[:, None] * X[rs.event_rows])

    frac = rs.tie_frac
    S0e = S0r[g_e] - frac * S0d[g_e]
    S1e = S1r[g_e] - frac[:, None] * S1d[g_e]
    M = S1e / S0e[:, None]

    ll = float(eta[rs.event_rows].sum() - np.sum(np.log(S0e) + shift))
    score = X[rs.event_rows].sum(axis=0) - M.sum(axis=0)

    # sum over events of S2e/S0e, folded into per-row weights on x x^T
    A = np.bincount(g_e, weights=1.0 / S0e, minlength=G)
    B = np.bincount(g_e, weights=frac / S0e, minlength=G)
    cumA = np.concatenate([[0.0], np.cumsum(A)])[rs.group_of_row + 1]
    coef = w * cumA
    coef[rs.event_rows] -= w_ev * B[g_e]
    info = (X * coef[:, None]).T @ X - M.T @ M
    return ll, score, info


def cox_partial_loglik(beta, X, time, event, ties: str = "efron"):
    """Partial log-likelihood, score and information at ``beta``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    rs = _RiskSets.build(X, np.asarray(time, float), np.asarray(event, bool), ties)
    return _cox_objective(np.asarray(beta, dtype=float), rs)


def fit_cox(X, time, event, names: Sequence[str] | None = None, ties: str = "efron") -> FittedModel:
    """Cox proportional hazards fit; Efron tie handling by default."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    _check_design(X, X.shape[1] + 1)
    if time.shape != (X.shape[0],) or event.shape != time.shape:
        raise InvalidModelInput("time and event must be vectors matching X")
    if not np.all(np.isfinite(time)) or np.any(time <= 0):
        raise InvalidModelInput("survival times must be finite and positive")
    n_events = int(event.sum())
    if n_events == 0:
        raise NoEvents("no events observed")
    if n_events < X.shape[1] + 1:
        raise InvalidModelInput(f"need at least {X.shape[1] + 1} events, got {n_events}")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    rs = _RiskSets.build(X, time, event, ties)
    beta, ll, info, it = _newton(
        lambda b: _cox_objective(b, rs),
        np.zeros(X.shape[1]),
        MonotoneLikelihood,
        lambda b: rs.X @ b,
    )
    return FittedModel.from_estimates(ModelKind.COX, names, beta, _invert(info), True, it, ll)
