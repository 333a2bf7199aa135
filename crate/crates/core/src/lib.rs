//! Event-rate estimation for count outcomes in randomized trials.
//!
//! The empirical estimator ([`empirical`]) works on exposure-rescaled counts
//! with a robust linear model; [`nbglm`] is the negative binomial comparator.
//! [`simgen`] and [`harness`] generate and evaluate simulated trials, and
//! [`meta`] pools rate ratios across strata.

pub mod domain;
pub mod empirical;
pub mod harness;
pub mod linmod;
pub mod meta;
pub mod nbglm;
pub mod simgen;
pub mod stats;

use thiserror::Error;

pub use domain::{
    validate_dataset, Alternative, ArmAggregate, DataError, Dataset, LogRateEstimate, MethodTag,
    RateEstimate, RateRatioResult, SubjectRecord,
};
pub use empirical::{Adjustment, EstimationError, InferenceConfig};
pub use harness::{MethodSpec, SimulationSummary, StudyConfig};
pub use linmod::{HcFlavor, LinModError};
pub use meta::{MetaError, StratumResult};
pub use nbglm::{NbError, NbFit};
pub use simgen::{RngStream, ScenarioSpec, SimError};

/// Any error raised by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    LinMod(#[from] LinModError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Nb(#[from] NbError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
