from .ehr import (
    CohortEvaluation,
    EhrStudyResult,
    balance_ratio,
    ehr_generator,
    in_band_ks,
    run_ehr_study,
    synthetic_ehr_pool,
)
from .experiments import (
    CellSummary,
    ExperimentResult,
    Scenario,
    run_power_experiment,
    run_scenarios,
    run_unmeasured_covariate_experiment,
)
from .generators import (
    DEFAULT_CELLS,
    CoxExponential,
    GeneratorConfig,
    Logistic,
    OneBinary,
    OneContinuous,
    SyntheticEHR,
    TwoBinary,
    gen_logistic_outcomes,
    gen_pool,
    gen_study_pool,
    gen_survival_outcomes,
    logistic_probability,
)

__all__ = [
    "CellSummary", "CohortEvaluation", "CoxExponential", "DEFAULT_CELLS", "EhrStudyResult",
    "ExperimentResult", "GeneratorConfig", "Logistic", "OneBinary", "OneContinuous", "Scenario",
    "SyntheticEHR", "TwoBinary", "balance_ratio", "ehr_generator", "gen_logistic_outcomes",
    "gen_pool", "gen_study_pool", "gen_survival_outcomes", "in_band_ks", "logistic_probability",
    "run_ehr_study", "run_power_experiment", "run_scenarios",
    "run_unmeasured_covariate_experiment", "synthetic_ehr_pool",
]
