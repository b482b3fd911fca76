//! Ranking engine for pairwise preference arenas.
//!
//! Comparison records with rater demographics go in; post-stratified
//! Bayesian leaderboards, adaptive matchmaking decisions, and tie-rate
//! decompositions come out.

pub mod decompose;
pub mod domain;
pub mod io;
pub mod likelihood;
pub mod matchmaker;
pub mod sampler;
pub mod scoring;
pub mod simulator;
pub mod stats;

pub use domain::{
    build_index, membership_weights, validate_record, ComparisonRecord, Country, Dataset,
    DemographicAxis, GroupRef, GroupRegistry, MetricRef, ModelRef, Outcome, RaterProfile,
};
pub use likelihood::{ModelSpec, OutcomeProbs, ParameterState};
pub use sampler::{fit_metric, PosteriorDraws, SamplerConfig};

