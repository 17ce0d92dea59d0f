"""Selective recruitment of informative cohorts from large covariate pools."""

from .density import DensityEstimate, TruncationBand, kde_fit, silverman_bandwidth, truncation_band
from .models import FittedModel, SignificanceReport, fit_cox, fit_logistic, significance
from .pool import (
    BinaryOutcome,
    CovariateKind,
    CovariateSpec,
    OutcomeKind,
    Pool,
    ScalingTransform,
    SurvivalOutcome,
    apply_scaling,
    binary,
    continuous,
    fit_scaling,
    ingest_csv,
    write_csv,
)
from .recruit import (
    Cohort,
    Protocol,
    RecruitmentWeights,
    binary_weights,
    continuous_weights,
    joint_balance_select,
    marginal_product_weights,
    pool_weights,
    random_select,
    sample_cohort,
    select,
)

__version__ = "0.1.0"
