"""Linear regression on linked files with covariate-dependent mismatch error."""

from .baselines import OracleSpec, fit_naive, fit_oracle
from .errors import (
    DegenerateDataError,
    DegenerateDensityError,
    InvalidInputError,
    LinkAdjustError,
    LinkageWarning,
    NoMismatchMassError,
    SingularDesignError,
    SingularInformationError,
)
from .extended import (
    composite_loglik_extended,
    extended_mstep_gamma,
    extended_mstep_theta,
    extended_responsibilities,
    fit_extended,
    lemma1_weights,
    mismatch_source_weights,
    pairwise_weights,
)
from .inference import InferenceResult, per_observation_score, sandwich_covariance, wald_intervals
from .model import (
    LinkedDataset,
    MismatchParams,
    MismatchRateConstraint,
    OutcomeParams,
    gaussian_loglik,
    h_logistic,
)
from .plain import (
    EmConfig,
    MarginalDensity,
    estimate_marginal,
    fit_plain,
    plain_estep,
    plain_mstep_gamma,
    plain_mstep_theta,
)
from .results import FitResult
from .simulate import (
    ScenarioSpec,
    Truth,
    casestudy_intercept_for_rate,
    gen_ele_blocks,
    gen_motivating,
    gen_overlap,
    generate,
    inject_casestudy_mismatch,
)

__version__ = "0.1.0"
