"""Feature-level Bayesian meta-regression for complex-intervention trials.

Fits a hierarchical normal model to contrast-level outcomes from
multi-arm trials with repeated follow-up, regressing effects on binary
intervention features, study covariates, follow-up indicators, and
their interactions. Within-trial covariances account for shared
reference arms and repeated measurement; between-trial heterogeneity
uses a common-reference correlation structure. Posteriors are sampled
by adaptive random-walk Metropolis.
"""

from .covariance import (
    BetweenCovariance,
    CovarianceError,
    WithinCovariance,
    between_structure,
    build_between_covariance,
    build_within_covariance,
    impute_ref_change_variance,
    mvn_logpdf,
    rho_for_separation,
)
from .data import (
    CenteringRecord,
    CovariateSchema,
    DataError,
    DataFormatError,
    Dataset,
    DataValidationError,
    Factor,
    FollowUpIndicator,
    InterventionArm,
    Observation,
    TrialRecord,
    center_covariates,
    dataset_to_dict,
    load_dataset,
    save_dataset,
    schema_from_dict,
    validate_dataset,
    validate_trial,
)
from .design import (
    DesignRow,
    ParameterVector,
    dataset_design_matrix,
    design_row,
    fixed_effects,
    interaction_value,
    trial_design_matrix,
)
from .diagnostics import (
    PosteriorSummary,
    gelman_rubin,
    read_chain_tsv,
    shrink_factor_trace,
    summarize,
    write_chain_tsv,
    write_rhat_trace_tsv,
    write_summary_tsv,
)
from .sampler import (
    AssembledDataset,
    AssembledTrial,
    ChainOutput,
    McmcConfig,
    PriorSpec,
    SamplerError,
    assemble,
    log_likelihood_latent,
    log_likelihood_marginal,
    log_likelihood_marginal_direct,
    log_prior,
    run_chain,
    run_mcmc,
)
from .simulate import SimConfig, draw_trial_outcomes, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "CovariateSchema",
    "Factor",
    "InterventionArm",
    "FollowUpIndicator",
    "Observation",
    "TrialRecord",
    "Dataset",
    "CenteringRecord",
    "DataError",
    "DataFormatError",
    "DataValidationError",
    "load_dataset",
    "save_dataset",
    "dataset_to_dict",
    "schema_from_dict",
    "validate_trial",
    "validate_dataset",
    "center_covariates",
    # design
    "ParameterVector",
    "DesignRow",
    "interaction_value",
    "trial_design_matrix",
    "dataset_design_matrix",
    "design_row",
    "fixed_effects",
    # covariance
    "WithinCovariance",
    "BetweenCovariance",
    "between_structure",
    "CovarianceError",
    "rho_for_separation",
    "impute_ref_change_variance",
    "build_within_covariance",
    "build_between_covariance",
    "mvn_logpdf",
    # sampler
    "PriorSpec",
    "McmcConfig",
    "ChainOutput",
    "SamplerError",
    "AssembledDataset",
    "AssembledTrial",
    "assemble",
    "log_prior",
    "log_likelihood_marginal",
    "log_likelihood_marginal_direct",
    "log_likelihood_latent",
    "run_chain",
    "run_mcmc",
    # diagnostics
    "PosteriorSummary",
    "gelman_rubin",
    "read_chain_tsv",
    "shrink_factor_trace",
    "summarize",
    "write_chain_tsv",
    "write_rhat_trace_tsv",
    "write_summary_tsv",
    # simulation
    "SimConfig",
    "draw_trial_outcomes",
    "simulate_dataset",
]
