import warnings

import numpy as np
import pytest
from scipy.special import expit

from selrec.errors import DimensionMismatch, ExcessiveFitFailures, InvalidConfig, PoolError
from selrec.models import fit_cox
from selrec.pool import quantile
from selrec.recruit import Protocol
from selrec.simulate import (
    CoxExponential,
    GeneratorConfig,
    Logistic,
    OneBinary,
    OneContinuous,
    SyntheticEHR,
    TwoBinary,
    balance_ratio,
    gen_logistic_outcomes,
    gen_pool,
    gen_study_pool,
    gen_survival_outcomes,
    in_band_ks,
    logistic_probability,
    run_ehr_study,
    run_power_experiment,
    run_unmeasured_covariate_experiment,
)
from selrec.simulate.ehr import ehr_generator


def quiet(fn, *a, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*a, **kw)


class TestGenerators:
    def test_one_binary(self):
        pool = gen_pool(GeneratorConfig(10_000, OneBinary(0.75)), 0)
        assert abs(np.mean(pool.column("x1") > 0) - 0.75) < 0.01

    def test_one_continuous_quantiles(self):
        pool = gen_pool(GeneratorConfig(100_000, OneContinuous(0, 0.608)), 1)
        lo, hi = quantile(pool.column("x1"), [0.05, 0.95])
        assert abs(lo + 1) < 0.02 and abs(hi - 1) < 0.02

    def test_two_binary_cells(self):
        pool = gen_pool(GeneratorConfig(100_000, TwoBinary((0.25,) * 4)), 2)
        x1, x2 = pool.column("x1") > 0, pool.column("x2") > 0
        cells = [np.mean(~x1 & ~x2), np.mean(~x1 & x2), np.mean(x1 & ~x2), np.mean(x1 & x2)]
        np.testing.assert_allclose(cells, 0.25, atol=0.01)

    def test_cell_order(self):
        pool = gen_pool(GeneratorConfig(50_000, TwoBinary((0.15, 0.60, 0.15, 0.10))), 3)
        x1, x2 = pool.column("x1") > 0, pool.column("x2") > 0
        assert abs(np.mean(~x1 & x2) - 0.60) < 0.01
        assert abs(np.mean(x1) - 0.25) < 0.01

    def test_deterministic(self):
        cfg = GeneratorConfig(500, TwoBinary(), Logistic(0.1, (0.2, -0.3)))
        a, b = gen_study_pool(cfg, 9), gen_study_pool(cfg, 9)
        np.testing.assert_array_equal(a.records, b.records)
        np.testing.assert_array_equal(a.outcome.y, b.outcome.y)

    def test_invalid_configs(self):
        with pytest.raises(InvalidConfig):
            TwoBinary((0.5, 0.5, 0.5, 0.5))
        with pytest.raises(InvalidConfig):
            OneBinary(1.5)
        with pytest.raises(InvalidConfig):
            OneContinuous(0, 0)
        with pytest.raises(InvalidConfig):
            GeneratorConfig(0)
        with pytest.raises(InvalidConfig):
            CoxExponential((0.1,), 0.0, 0.1)

    def test_config_round_trip(self):
        for cfg in (GeneratorConfig(100, TwoBinary(), Logistic(-1 / 6, (1 / 3, 1 / 3))),
                    GeneratorConfig(100, OneContinuous(0.0, 0.608)),
                    ehr_generator(1000)):
            assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(InvalidConfig):
            GeneratorConfig.from_dict({"pool_size": 3})

    def test_logistic_probabilities(self):
        assert logistic_probability([1, 1], -1 / 6, [1 / 3, 1 / 3])[0] == pytest.approx(expit(0.5))
        assert expit(0.5) == pytest.approx(0.6225, abs=1e-4)
        assert logistic_probability([0.0], -0.5, [-0.25])[0] == pytest.approx(0.3775, abs=1e-4)

    def test_null_outcomes(self):
        pool = gen_pool(GeneratorConfig(10_000, OneBinary(0.3)), 4)
        y = gen_logistic_outcomes(pool, 0.0, [0.0], 5).outcome.y
        assert abs(np.mean(y > 0) - 0.5) < 0.01

    def test_dimension_mismatch(self):
        pool = gen_pool(GeneratorConfig(10, TwoBinary()), 0)
        with pytest.raises(DimensionMismatch):
            gen_logistic_outcomes(pool, 0.0, [0.1], 0)
        with pytest.raises(DimensionMismatch):
            gen_survival_outcomes(pool, [0.1, 0.2, 0.3], 1.0, 0.0, 0)

    def test_survival_null_no_censoring(self):
        pool = gen_pool(GeneratorConfig(100_000, OneContinuous()), 6)
        out = gen_survival_outcomes(pool, [0.0], 0.5, 0.0, 7).outcome
        assert out.event.all()
        assert abs(out.time.mean() - 2.0) / 2.0 < 0.02

    def test_competing_exponentials(self):
        pool = gen_pool(GeneratorConfig(50_000, OneContinuous()), 8)
        out = gen_survival_outcomes(pool, [0.0], 0.3, 0.3, 9).outcome
        assert abs(out.event.mean() - 0.5) < 0.01

    def test_cox_round_trip(self):
        pool = gen_pool(GeneratorConfig(5000, OneContinuous(0, 1)), 10)
        out = gen_survival_outcomes(pool, [0.5], 1.0, 0.25, 11).outcome
        assert abs(fit_cox(pool.records, out.time, out.event).coefficients[0] - 0.5) < 0.05

    def test_synthetic_ehr(self):
        sch = SyntheticEHR((0.1, 0.5, 0.9), 2, correlation_seed=3, lognormal=(1,))
        corr = sch.correlation()
        np.testing.assert_allclose(np.diag(corr), 1.0)
        assert np.linalg.eigvalsh(corr).min() > 0
        pool = gen_pool(GeneratorConfig(50_000, sch), 12)
        assert pool.names == ["b1", "b2", "b3", "c1", "c2"]
        prev = [np.mean(pool.column(n) > 0) for n in ("b1", "b2", "b3")]
        np.testing.assert_allclose(prev, [0.1, 0.5, 0.9], atol=0.01)
        assert pool.column("c2").min() > 0


class TestPowerExperiment:
    def test_determinism_and_schedule_independence(self):
        gen = GeneratorConfig(2000, TwoBinary(), Logistic(-1 / 6, (1 / 3, 1 / 3)))
        kw = dict(protocols=["random", "marginal", "joint"], n_grid=[100, 300], R=8, master_seed=5)
        a = quiet(run_power_experiment, gen, **kw)
        b = quiet(run_power_experiment, gen, **kw)
        c = quiet(run_power_experiment, gen, threads=2, **kw)
        assert a.to_records() == b.to_records() == c.to_records()

    def test_records_shape(self):
        gen = GeneratorConfig(1000, TwoBinary(), Logistic(-1 / 6, (1 / 3, 0.0)))
        r = quiet(run_power_experiment, gen, ["random"], [200], R=5)
        metrics = [row[2] for row in r.to_records()]
        assert metrics == ["power", "power_per_param", "mse", "type1", "bias_x1", "bias_x2",
                           "fit_failure_rate"]
        c = r.cell("random", 200)
        assert 0 <= c.power <= 1 and 0 <= c.type1 <= 1 and c.mse >= 0
        assert c.power_se == pytest.approx(np.sqrt(c.power * (1 - c.power) / c.replications))

    def test_small_R_warns(self):
        gen = GeneratorConfig(500, OneBinary(0.5), Logistic(0.0, (0.5,)))
        with pytest.warns(UserWarning):
            run_power_experiment(gen, ["random"], [100], R=2)

    def test_fixed_pool(self):
        gen = GeneratorConfig(500, OneBinary(0.5), Logistic(0.0, (0.5,)))
        r = quiet(run_power_experiment, gen, ["random"], [500], R=4, fixed_pool=True)
        # with n = N and a fixed pool the covariates never change, only outcomes do
        assert r.cell("random", 500).replications == 4

    def test_pool_too_small(self):
        gen = GeneratorConfig(100, OneBinary(0.5), Logistic(0.0, (0.5,)))
        with pytest.raises(InvalidConfig):
            quiet(run_power_experiment, gen, ["random"], [200], R=2)

    def test_excessive_failures(self):
        # tiny cohorts from a very imbalanced pool separate almost every time
        gen = GeneratorConfig(2000, OneBinary(0.98), Logistic(3.0, (3.0,)))
        with pytest.raises(ExcessiveFitFailures):
            quiet(run_power_experiment, gen, ["random"], [10], R=40)

    def test_continuous_protocol_runs(self):
        gen = GeneratorConfig(3000, OneContinuous(0, 0.608), Logistic(-0.5, (-0.25,)))
        r = quiet(run_power_experiment, gen, ["random", Protocol.CONTINUOUS], [200], R=5)
        assert r.labels == ("random", "continuous")


class TestUnmeasured:
    def test_labels_and_truth(self):
        r = quiet(run_unmeasured_covariate_experiment, 6, [300], pool_size=2000)
        assert r.labels == ("joint", "random", "joint-control", "random-control")
        assert r.coefficient_names["joint"] == ("x1",)
        assert r.cell("joint", 300).bias.shape == (1,)


@pytest.fixture(scope="module")
def pool():
    gen = GeneratorConfig(
        6000,
        SyntheticEHR((0.3, 0.2, 0.6), 2, correlation_seed=1),
        CoxExponential((0.4, 0.3, -0.2, 0.5, 0.0), 0.1, 0.05),
    )
    return gen_study_pool(gen, 3)


class TestEhrStudy:
    def test_whole_pool_reproduces_reference(self, pool):
        r = run_ehr_study(pool, 1, pool.N, 0.05, 0)
        for e in r.evaluations:
            assert e.mse == 0.0
            np.testing.assert_array_equal(e.coefficients, r.reference.coefficients)

    def test_metrics_consistent(self, pool):
        r = run_ehr_study(pool, 3, 1000, 0.05, 1)
        n_sig = int(r.reference_significant.sum())
        assert r.n_subpools == 3 and len(r.evaluations) == 6
        for e in r.evaluations:
            assert e.recovered + e.missed == n_sig
            assert 0 <= e.spurious <= len(r.reference_significant) - n_sig
            assert e.mse >= 0 and 0 <= e.balance_ratio_median <= 1
        assert [row[2] for row in r.to_records()][:6] == list(r.METRICS)

    def test_deterministic(self, pool):
        a = run_ehr_study(pool, 2, 500, 0.05, 7)
        b = run_ehr_study(pool, 2, 500, 0.05, 7)
        assert a.to_records() == b.to_records()

    def test_preconditions(self, pool):
        with pytest.raises(InvalidConfig):
            run_ehr_study(pool, 10, 700, 0.05, 0)
        with pytest.raises(PoolError):
            run_ehr_study(pool.with_outcome(None), 2, 100, 0.05, 0)

    def test_balance_ratio(self):
        assert balance_ratio([1, 1, 1, -1]) == pytest.approx(1 / 3)
        assert balance_ratio([1, -1]) == 1.0
        assert balance_ratio([1, 1]) == 0.0

    def test_in_band_ks(self):
        pool_vals = np.linspace(0, 1, 10_001)
        assert in_band_ks(np.linspace(0.05, 0.95, 5001), pool_vals) < 0.001
