//! Negative binomial (NB2) regression comparator.
//!
//! Log link with `ln(exposure)` offset and cell-means arm coding. `beta` is
//! fitted by Fisher scoring and `k` by a bracketed Newton search on its
//! profile score, alternating until both the likelihood and the score settle.
//! Covariances: model-based (inverse observed information), sandwich, and the
//! sandwich scaled by the Pearson dispersion factor.

mod design;
mod fit;
mod likelihood;
mod marginal;

use thiserror::Error;

pub use design::NbDesign;
pub use fit::{
    fit_design, fit_nb, fit_nb_with, robust_covariance, NbFit, NbOptions, NonConvergence,
    PearsonTarget,
};
pub use likelihood::{nb_loglik, nb_logpmf, nb_logpmf_dk, nb_logpmf_dk2, nb_score, poisson_loglik};
pub use marginal::{
    marginal_rates_aipw, marginal_rates_gcomp, nb_rate_ratio, nb_rate_ratio_from_fit,
    EstimatorKind, MarginalRates,
};

use crate::empirical::EstimationError;

#[derive(Debug, Error)]
pub enum NbError {
    #[error("NB fit did not converge after {} iterations: {}", .0.iterations, .0.reason)]
    NonConvergence(Box<NonConvergence>),
    /// The likelihood is maximized at `k = 0`; the attached fit is the Poisson fit.
    #[error("dispersion estimate is on the boundary k = 0 (Poisson fit)")]
    BoundaryDispersion(Box<NbFit>),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("adjusted model requested but the dataset has no covariates")]
    NoCovariates,
    #[error("covariate column {column} does not exist")]
    CovariateOutOfRange { column: usize },
    #[error("arm {arm} has no subjects")]
    EmptyArm { arm: usize },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

impl NbError {
    /// The best available fit, if the error carries one.
    pub fn fit(&self) -> Option<&NbFit> {
        match self {
            NbError::NonConvergence(d) => Some(&d.best),
            NbError::BoundaryDispersion(f) => Some(f),
            _ => None,
        }
    }
}
