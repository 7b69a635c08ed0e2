//! Bayesian PROCOVA: treatment-effect inference in randomized trials with a
//! prognostic score covariate, borrowing from historical controls through an
//! additive mixture prior.
//!
//! The pipeline is
//! [`fit_informative_component`] → [`MixturePrior`] → [`GibbsSampler`] →
//! [`summarize`], with [`procova_fit`] as the frequentist reference and
//! [`run_scenario`] for operating-characteristic studies.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Version of this library, reported in analysis metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod data;
pub mod error;
pub mod exec;
pub mod frequentist;
pub mod posterior;
pub mod prior;
pub mod random;
pub mod sampler;
pub mod sbc;
pub mod simulation;

pub use data::{
    build_design, load_historical_csv, load_historical_csv_with, load_trial_csv, load_trial_csv_with, CsvColumns,
    DesignMatrix, HistoricalDataset, SubjectRecord, TrialDataset,
};
pub use error::{Error, ErrorKind, Result};
pub use exec::Execution;
pub use frequentist::{procova_ci_and_test, procova_fit, HcVariant, OlsFit, WaldInference};
pub use posterior::{
    conditional_beta_moments, ess, ess_gain, posterior_mixture_weight, BetaMoments, ComponentPosterior,
    ConditionalPosterior, OmegaDensity, OmegaGrid, PosteriorComponents,
};
pub use prior::{
    bootstrap_delta_variance, calibrate_k, fit_informative_component, prior_beta1_variance,
    prior_effective_sample_size, FlatComponent, InformativeComponent, KMode, MixturePrior, PriorVariance, WeightPrior,
};
pub use sampler::{
    gibbs_run, summarize, ChainSummary, GibbsConfig, GibbsDraw, GibbsSampler, OmegaUpdate, SamplerVariant,
};
pub use sbc::{sbc_validate, RandomizedDesign, SbcConfig, SbcResult};
pub use simulation::{generate_pair, run_scenario, DataSource, ScenarioConfig, ScenarioResult};
