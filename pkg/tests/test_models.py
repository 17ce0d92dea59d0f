from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from selrec.errors import (
    InvalidModelInput,
    MonotoneLikelihood,
    NoEvents,
    SeparationDetected,
    UnconvergedModel,
)
from selrec.models import (
    FittedModel,
    ModelKind,
    cox_partial_loglik,
    fit_cox,
    fit_logistic,
    logistic_loglik,
    significance,
    wald_p_values,
)

# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------


def naive_logistic_ll(w0, w, X, y):
    y01 = (np.asarray(y) + 1) / 2
    p = expit(w0 + np.asarray(X) @ np.atleast_1d(w))
    return float(np.sum(y01 * np.log(p) + (1 - y01) * np.log1p(-p)))


def naive_cox_ll(beta, X, time, event, ties="efron"):
    """Partial log-likelihood by explicit loops over distinct event times."""
    X = np.atleast_2d(np.asarray(X, float).T).T
    r = np.exp(X @ np.atleast_1d(beta))
    ll = 0.0
    for t in np.unique(time[event]):
        dead = np.flatnonzero((time == t) & event)
        at_risk = r[time >= t].sum()
        tied = r[dead].sum()
        for l, i in enumerate(dead):
            frac = l / len(dead) if ties == "efron" else 0.0
            ll += np.log(r[i]) - np.log(at_risk - frac * tied)
    return ll


def grid_argmax(f, lo, hi, step):
    """Coordinate-free brute force: coarse grid, then a fine grid of ``step`` around the best cell."""
    coarse = np.arange(lo, hi + 1e-12, 0.01)
    best = max(coarse, key=f)
    fine = np.arange(best - 0.02, best + 0.02 + 1e-12, step)
    return max(fine, key=f)


def grid_argmax_2d(f, lo, hi, step):
    coarse = np.arange(lo, hi + 1e-12, 0.02)
    vals = np.array([[f(a, b) for b in coarse] for a in coarse])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    a0, b0 = coarse[i], coarse[j]
    fine_a = np.arange(a0 - 0.03, a0 + 0.03 + 1e-12, step)
    fine_b = np.arange(b0 - 0.03, b0 + 0.03 + 1e-12, step)
    F = f(fine_a[:, None], fine_b[None, :])
    i, j = np.unravel_index(np.argmax(F), F.shape)
    return fine_a[i], fine_b[j]


def fd_jacobian(g, x, h=1e-5):
    x = np.asarray(x, float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((g(x + e) - g(x - e)) / (2 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Logistic
# ---------------------------------------------------------------------------

X6 = np.array([-1.2, -0.4, 0.1, 0.5, 0.9, 1.7])
Y6 = np.array([-1, 1, -1, 1, -1, 1], dtype=float)


class TestLogistic:
    def test_grid_oracle_six_points(self):
        m = fit_logistic(X6[:, None], Y6)

        def f(a, b):
            p = expit(a[..., None] + b[..., None] * X6) if np.ndim(a) else expit(a + b * X6)
            y01 = (Y6 + 1) / 2
            return np.sum(y01 * np.log(p) + (1 - y01) * np.log1p(-p), axis=-1)

        a, b = grid_argmax_2d(f, -5, 5, 1e-4)
        assert abs(m.coefficients[0] - a) < 2e-4
        assert abs(m.coefficients[1] - b) < 2e-4

    def test_loglik_matches_naive(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 3))
        y = np.where(rng.random(40) < 0.5, 1.0, -1.0)
        w = rng.normal(size=4)
        A = np.column_stack([np.ones(40), X])
        assert logistic_loglik(w, A, y)[0] == pytest.approx(naive_logistic_ll(w[0], w[1:], X, y), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_derivatives_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 12, 2
        A = np.column_stack([np.ones(n), rng.normal(size=(n, d))])
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        w = rng.normal(scale=0.5, size=d + 1)
        _, g, info = logistic_loglik(w, A, y)
        g_fd = fd_jacobian(lambda v: np.array([logistic_loglik(v, A, y)[0]]), w).ravel()
        H_fd = fd_jacobian(lambda v: logistic_loglik(v, A, y)[1], w)
        np.testing.assert_allclose(g, g_fd, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(-info, H_fd, rtol=1e-4, atol=1e-8)

    def test_score_equations_at_optimum(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 2))
        y = np.where(rng.random(500) < expit(0.3 + X @ [0.5, -0.2]), 1.0, -1.0)
        m = fit_logistic(X, y)
        A = np.column_stack([np.ones(500), X])
        resid = (y + 1) / 2 - expit(A @ m.coefficients)
        np.testing.assert_allclose(A.T @ resid, 0, atol=1e-6)
        assert m.converged and m.kind is ModelKind.LOGISTIC

    def test_label_symmetry_exact(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(300, 3))
        y = np.where(rng.random(300) < expit(X @ [0.4, 0.1, -0.3]), 1.0, -1.0)
        a, b = fit_logistic(X, y), fit_logistic(X, -y)
        np.testing.assert_array_equal(a.coefficients, -b.coefficients)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 2))
        y = np.where(rng.random(200) < 0.4, 1.0, -1.0)
        a, b = fit_logistic(X, y), fit_logistic(X, y)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)
        np.testing.assert_array_equal(a.covariance, b.covariance)

    def test_recovers_paper_parameters(self):
        rng = np.random.default_rng(4)
        X = np.where(rng.random((10_000, 2)) < 0.5, 1.0, -1.0)
        y = np.where(rng.random(10_000) < expit(-1 / 6 + X @ [1 / 3, 1 / 3]), 1.0, -1.0)
        m = fit_logistic(X, y)
        np.testing.assert_allclose(m.coefficients, [-1 / 6, 1 / 3, 1 / 3], atol=0.05)

    def test_null_model(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(10_000, 1))
        y = np.where(rng.random(10_000) < 0.5, 1.0, -1.0)
        assert abs(fit_logistic(X, y).coefficients[1]) < 0.05

    def test_null_p_values_uniform(self):
        from scipy import stats

        ps = []
        for s in range(300):
            rng = np.random.default_rng(100 + s)
            X = rng.normal(size=(200, 1))
            y = np.where(rng.random(200) < 0.5, 1.0, -1.0)
            ps.append(fit_logistic(X, y).p_values[1])
        assert stats.kstest(ps, "uniform").pvalue > 0.001

    def test_matches_statsmodels(self):
        sm = pytest.importorskip("statsmodels.api")
        rng = np.random.default_rng(6)
        X = rng.normal(size=(400, 3))
        y = np.where(rng.random(400) < expit(0.2 + X @ [0.5, 0.0, -0.4]), 1.0, -1.0)
        m = fit_logistic(X, y)
        ref = sm.Logit((y + 1) / 2, sm.add_constant(X)).fit(disp=0, tol=1e-12)
        np.testing.assert_allclose(m.coefficients, ref.params, rtol=1e-7)
        np.testing.assert_allclose(m.standard_errors, ref.bse, rtol=1e-6)

    def test_separation(self):
        X = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])[:, None]
        y = np.array([-1, -1, -1, 1, 1, 1], dtype=float)
        with pytest.raises(SeparationDetected):
            fit_logistic(X, y)

    def test_invalid_inputs(self):
        X = np.arange(10.0)[:, None]
        with pytest.raises(InvalidModelInput):
            fit_logistic(X, np.ones(10))
        with pytest.raises(InvalidModelInput):
            fit_logistic(np.ones((10, 1)), np.array([1.0, -1.0] * 5))
        with pytest.raises(InvalidModelInput):
            fit_logistic(X[:2], np.array([1.0, -1.0]))


# ---------------------------------------------------------------------------
# Cox
# ---------------------------------------------------------------------------

T5 = np.array([2.0, 5.0, 1.0, 4.0, 3.0])
E5 = np.array([True, True, True, False, True])
X5 = np.array([0.5, -1.0, 1.5, 0.0, -0.5])


class TestCox:
    def test_hand_score_and_information_at_zero(self):
        # at beta=0 each event contributes x_i minus the risk-set mean, and the
        # risk-set variance to the information; evaluated exactly with fractions
        x = [Fraction(v).limit_denominator() for v in X5]
        score, info = Fraction(0), Fraction(0)
        for i in np.flatnonzero(E5):
            risk = [x[j] for j in range(5) if T5[j] >= T5[i]]
            mean = sum(risk) / len(risk)
            score += x[i] - mean
            info += sum(v * v for v in risk) / len(risk) - mean * mean
        ll, g, I = cox_partial_loglik([0.0], X5, T5, E5)
        assert g[0] == pytest.approx(float(score), abs=1e-14)
        assert I[0, 0] == pytest.approx(float(info), abs=1e-14)
        # by hand: events at t=1,2,3,5 with risk sets of 5,4,3,1 members
        assert score == Fraction(43, 20)
        assert info == Fraction(74, 100) + Fraction(5, 16) + Fraction(1, 6)

    def test_grid_oracle_five_points(self):
        m = fit_cox(X5[:, None], T5, E5)
        b = grid_argmax(lambda v: naive_cox_ll(v, X5, T5, E5), -5, 5, 1e-4)
        assert abs(m.coefficients[0] - b) < 2e-4

    def test_grid_oracle_with_ties(self):
        t = np.array([1.0, 1.0, 2.0, 2.0, 2.0, 3.0])
        e = np.array([True, True, True, True, False, True])
        x = np.array([1.0, -0.5, 0.3, 0.8, -1.0, -0.2])
        for ties in ("efron", "breslow"):
            m = fit_cox(x[:, None], t, e, ties=ties)
            b = grid_argmax(lambda v: naive_cox_ll(v, x, t, e, ties), -5, 5, 1e-4)
            assert abs(m.coefficients[0] - b) < 2e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["efron", "breslow"]))
    def test_derivatives_match_finite_differences(self, seed, ties):
        rng = np.random.default_rng(seed)
        n, d = 15, 2
        X = rng.normal(size=(n, d))
        t = rng.integers(1, 6, n).astype(float)  # heavy ties
        e = rng.random(n) < 0.7
        e[0] = True
        b = rng.normal(scale=0.5, size=d)
        ll, g, info = cox_partial_loglik(b, X, t, e, ties)
        assert ll == pytest.approx(naive_cox_ll(b, X, t, e, ties), rel=1e-10)
        g_fd = fd_jacobian(lambda v: np.array([naive_cox_ll(v, X, t, e, ties)]), b).ravel()
        H_fd = fd_jacobian(lambda v: cox_partial_loglik(v, X, t, e, ties)[1], b)
        np.testing.assert_allclose(g, g_fd, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(-info, H_fd, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("ties", ["efron", "breslow"])
    def test_matches_statsmodels(self, ties):
        sm = pytest.importorskip("statsmodels.api")
        rng = np.random.default_rng(7)
        X = rng.normal(size=(300, 3))
        t = np.ceil(rng.exponential(1 / np.exp(X @ [0.5, 0.0, -0.3])) * 10)
        e = rng.random(300) < 0.8
        m = fit_cox(X, t, e, ties=ties)
        ref = sm.PHReg(t, X, status=e.astype(int), ties=ties).fit()
        np.testing.assert_allclose(m.coefficients, ref.params, rtol=1e-6)
        np.testing.assert_allclose(m.standard_errors, ref.bse, rtol=1e-5)

    def test_rank_invariance_bit_exact(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(200, 2))
        t = np.round(rng.exponential(size=200), 2) + 0.01
        e = rng.random(200) < 0.7
        a = fit_cox(X, t, e)
        for f in (np.log1p, lambda s: 3 * s + 7, np.sqrt, lambda s: np.exp(s) - 0.5):
            np.testing.assert_array_equal(fit_cox(X, f(t), e).coefficients, a.coefficients)

    def test_known_beta(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=5000)
        t_ev = rng.exponential(1 / np.exp(0.5 * x))
        t_c = rng.exponential(4.0, 5000)  # roughly 20% censoring
        e = t_ev <= t_c
        assert 0.15 < 1 - e.mean() < 0.3
        m = fit_cox(x[:, None], np.minimum(t_ev, t_c), e)
        assert abs(m.coefficients[0] - 0.5) < 0.05

    def test_null(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(10_000, 1))
        m = fit_cox(x, rng.exponential(size=10_000), np.ones(10_000, bool))
        assert abs(m.coefficients[0]) < 0.05

    def test_no_events(self):
        with pytest.raises(NoEvents):
            fit_cox(X5[:, None], T5, np.zeros(5, bool))

    def test_too_few_events(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        e = np.zeros(10, bool)
        e[:2] = True
        with pytest.raises(InvalidModelInput):
            fit_cox(X, np.arange(1.0, 11.0), e)

    def test_monotone_likelihood(self):
        # every event has the largest covariate in its risk set
        x = np.array([5.0, 4.0, 3.0, 2.0, 1.0, 0.0])
        t = np.arange(1.0, 7.0)
        e = np.array([True, True, True, True, True, False])
        with pytest.raises(MonotoneLikelihood):
            fit_cox(x[:, None], t, e)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def _model(p_values, kind=ModelKind.COX, converged=True):
    p = np.asarray(p_values, float)
    names = tuple(f"x{j}" for j in range(len(p)))
    return FittedModel(kind, names, np.zeros(len(p)), np.eye(len(p)), np.zeros(len(p)), p,
                       converged, 1, 0.0)


class TestInference:
    def test_threshold(self):
        r = significance(_model([0.01, 0.20]), 0.05)
        np.testing.assert_array_equal(r.significant, [True, False])

    def test_alpha_one(self):
        assert significance(_model([0.01, 0.99, 0.5]), 1.0).significant.all()

    def test_unconverged(self):
        with pytest.raises(UnconvergedModel):
            significance(_model([0.1], converged=False))

    def test_intercept_excluded(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(100, 2))
        y = np.where(rng.random(100) < 0.5, 1.0, -1.0)
        r = significance(fit_logistic(X, y, ["a", "b"]))
        assert r.names == ("a", "b") and r.significant.shape == (2,)

    def test_wald_p_values(self):
        from scipy import stats

        z = np.array([0.0, 1.959963984540054, -3.0, 50.0])
        p = wald_p_values(z)
        np.testing.assert_allclose(p[:3], 2 * stats.norm.sf(np.abs(z[:3])), rtol=1e-12)
        assert p[3] == 0.0  # below the 1e-300 floor

    def test_covariance_psd_and_z(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 3))
        y = np.where(rng.random(300) < expit(X @ [0.3, 0.3, 0.0]), 1.0, -1.0)
        m = fit_logistic(X, y)
        np.testing.assert_array_equal(m.covariance, m.covariance.T)
        assert np.linalg.eigvalsh(m.covariance).min() > -1e-8
        np.testing.assert_allclose(m.wald_z, m.coefficients / m.standard_errors)
        ci = m.confidence_intervals(0.95)
        np.testing.assert_allclose(ci[:, 1] - ci[:, 0], 2 * 1.959963984540054 * m.standard_errors)
