//! Simulated trials.
//!
//! Two families: baseline and outcome NB counts coupled by a Gaussian copula,
//! and zero-inflated NB outcomes driven by a Poisson count covariate and a
//! normal covariate. Follow-up comes from a mixture of uniforms. Every draw
//! goes through an [`RngStream`], so a replicate is reproducible from its
//! `(seed, stream_id)` alone.

mod copula;
mod rng;
mod scenario;
mod stratified;

use rand::Rng;
use thiserror::Error;

pub use copula::{
    calibrate_latent_correlation, calibrate_with, copula_draws, gen_copula_dataset,
    gen_correlated_nb, realized_correlation, CalibrationSettings, CountTriple,
};
pub use rng::RngStream;
pub use scenario::{
    parse_config, scenario, CopulaSpec, ExposureMixture, OutcomeModel, ScenarioSpec,
    UniformComponent, ZinbSpec,
};
pub use stratified::{gen_stratified_trial, StratifiedTrialSpec};

use crate::domain::{Dataset, SubjectRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown case '{0}'")]
    UnknownCase(String),
    #[error("target correlation {target} is not achievable (maximum about {max_achievable:.3})")]
    Unachievable { target: f64, max_achievable: f64 },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

/// Follow-up durations drawn from `mix`.
pub fn gen_exposure_from<R: Rng + ?Sized>(
    mix: &ExposureMixture,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let total: f64 = mix.components.iter().map(|c| c.weight).sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut pick = mix.components[mix.components.len() - 1];
            for c in &mix.components {
                if u < c.weight {
                    pick = *c;
                    break;
                }
                u -= c.weight;
            }
            rng.random_range(pick.low..pick.high)
        })
        .collect()
}

/// Follow-up from the default 50/50 mixture of U(0.6, 1.2) and U(0.8, 1.4).
pub fn gen_exposure<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    gen_exposure_from(&ExposureMixture::default(), n, rng)
}

/// Smallest `y` with `P(Y <= y) >= p` under NB2 with the given mean and
/// dispersion (`k = 0` is Poisson).
pub fn nb_quantile(p: f64, mean: f64, k: f64) -> u64 {
    if mean <= 0.0 || p <= 0.0 {
        return 0;
    }
    let t = k * mean;
    let mut pmf = if k > 0.0 {
        (-t.ln_1p() / k).exp()
    } else {
        (-mean).exp()
    };
    let ratio = mean / (1.0 + t);
    let mut cdf = pmf;
    let mut y = 0u64;
    while cdf < p {
        let yf = y as f64;
        pmf *= ratio * (1.0 + k * yf) / (yf + 1.0);
        y += 1;
        cdf += pmf;
        // rounding can leave the cdf just short of p far in the tail
        if yf > mean && pmf < 1e-17 * cdf {
            break;
        }
    }
    y
}

/// Zero-inflated NB trial with covariates `x` (Poisson count) and `z` (normal).
pub fn gen_zinb_dataset(spec: &ScenarioSpec, stream: RngStream) -> Result<Dataset, SimError> {
    let OutcomeModel::Zinb(z) = &spec.outcome else {
        return Err(SimError::InvalidSpec(
            "expected a zero-inflated scenario".into(),
        ));
    };
    spec.validate()?;
    let mut rng = stream.rng();
    let poisson =
        rand_distr::Poisson::new(z.x_mean).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let n = spec.n_per_arm;
    let mut records = Vec::with_capacity(2 * n);
    let (names, use_z) = if z.continuous_covariate {
        (vec!["x".to_string(), "z".to_string()], true)
    } else {
        (vec!["x".to_string()], false)
    };
    for arm in 0..2 {
        let exposure = gen_exposure_from(&spec.exposure, n, &mut rng);
        for (j, &d) in exposure.iter().enumerate() {
            let x: f64 = rand_distr::Distribution::sample(&poisson, &mut rng);
            let zv: f64 = if use_z {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
            } else {
                0.0
            };
            let structural_zero = rng.random::<f64>() < z.pi;
            let u = rng.random::<f64>();
            let y = if structural_zero {
                0
            } else {
                let eta = z.beta0 + z.beta_trt * arm as f64 + z.beta1 * x + z.beta2 * zv;
                nb_quantile(u, eta.exp() * d, z.k)
            };
            let covs = if use_z { vec![x, zv] } else { vec![x] };
            records
                .push(SubjectRecord::new(format!("{arm}-{j:06}"), arm, y, d).with_covariates(covs));
        }
    }
    to_dataset(records, 2, names)
}

/// Generates one dataset for `spec`; copula scenarios need the calibrated
/// latent correlation.
pub fn gen_dataset(
    spec: &ScenarioSpec,
    latent_rho: f64,
    stream: RngStream,
) -> Result<Dataset, SimError> {
    match &spec.outcome {
        OutcomeModel::Copula(_) => gen_copula_dataset(spec, latent_rho, stream),
        OutcomeModel::Zinb(_) => gen_zinb_dataset(spec, stream),
    }
}

pub(crate) fn to_dataset(
    records: Vec<SubjectRecord>,
    arms: usize,
    names: Vec<String>,
) -> Result<Dataset, SimError> {
    Dataset::new(records, arms, names)
        .map_err(|e| SimError::InvalidSpec(format!("generated data rejected: {e}")))
}
