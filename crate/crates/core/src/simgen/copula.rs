use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    gen_exposure_from, nb_quantile, to_dataset, OutcomeModel, RngStream, ScenarioSpec, SimError,
};
use crate::domain::{Dataset, SubjectRecord};
use crate::stats::norm_cdf;

const UPPER_LATENT: f64 = 0.999;
const MAX_TARGET: f64 = 0.95;

/// Monte Carlo settings for the latent-correlation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub draws: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            draws: 200_000,
            seed: 0x5eed_c0_1a,
            tol: 0.005,
        }
    }
}

/// Baseline count, outcome count and follow-up for one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountTriple {
    pub x: u64,
    pub y: u64,
    pub d: f64,
}

/// Draws `n` subjects whose baseline NB(`r_x`, `k_x`) and outcome
/// NB(`rate * d`, `k`) counts are joined through a Gaussian copula with
/// latent correlation `latent_rho`.
#[allow(clippy::too_many_arguments)]
pub fn copula_draws<R: Rng + ?Sized>(
    r_x: f64,
    k_x: f64,
    rate: f64,
    k: f64,
    latent_rho: f64,
    exposure: &super::ExposureMixture,
    n: usize,
    rng: &mut R,
) -> Vec<CountTriple> {
    let d = gen_exposure_from(exposure, n, rng);
    let c = (1.0 - latent_rho * latent_rho).max(0.0).sqrt();
    d.into_iter()
        .map(|d| {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let x = nb_quantile(norm_cdf(z1), r_x, k_x);
            let y = nb_quantile(norm_cdf(latent_rho * z1 + c * z2), rate * d, k);
            CountTriple { x, y, d }
        })
        .collect()
}

/// One arm of a copula scenario.
pub fn gen_correlated_nb<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    arm: usize,
    n: usize,
    latent_rho: f64,
    rng: &mut R,
) -> Result<Vec<CountTriple>, SimError> {
    let OutcomeModel::Copula(c) = &spec.outcome else {
        return Err(SimError::InvalidSpec("expected a copula scenario".into()));
    };
    if arm > 1 {
        return Err(SimError::InvalidSpec(format!("arm {arm} out of range")));
    }
    Ok(copula_draws(
        c.r_x,
        c.k_x,
        c.rates[arm],
        c.dispersions[arm],
        latent_rho,
        &spec.exposure,
        n,
        rng,
    ))
}

/// Two-arm copula trial; the baseline count is the covariate `x`.
pub fn gen_copula_dataset(
    spec: &ScenarioSpec,
    latent_rho: f64,
    stream: RngStream,
) -> Result<Dataset, SimError> {
    spec.validate()?;
    let mut rng = stream.rng();
    let n = spec.n_per_arm;
    let mut records = Vec::with_capacity(2 * n);
    for arm in 0..2 {
        let draws = gen_correlated_nb(spec, arm, n, latent_rho, &mut rng)?;
        for (j, t) in draws.into_iter().enumerate() {
            records.push(
                SubjectRecord::new(format!("{arm}-{j:06}"), arm, t.y, t.d)
                    .with_covariates(vec![t.x as f64]),
            );
        }
    }
    to_dataset(records, 2, vec!["x".into()])
}

/// Pearson correlation of baseline and outcome counts.
pub fn realized_correlation(draws: &[CountTriple]) -> f64 {
    let n = draws.len() as f64;
    let mx = draws.iter().map(|t| t.x as f64).sum::<f64>() / n;
    let my = draws.iter().map(|t| t.y as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for t in draws {
        let dx = t.x as f64 - mx;
        let dy = t.y as f64 - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Latent correlation that gives the scenario's target observed correlation
/// on the control-arm margins. Deterministic for a given spec.
pub fn calibrate_latent_correlation(spec: &ScenarioSpec, tol: f64) -> Result<f64, SimError> {
    calibrate_with(
        spec,
        &CalibrationSettings {
            tol,
            ..CalibrationSettings::default()
        },
    )
}

pub fn calibrate_with(
    spec: &ScenarioSpec,
    settings: &CalibrationSettings,
) -> Result<f64, SimError> {
    let OutcomeModel::Copula(c) = &spec.outcome else {
        return Err(SimError::InvalidSpec(
            "calibration needs a copula scenario".into(),
        ));
    };
    // Targets above the scenario cap are still checked for attainability
    // first, so an impossible target reports how far it is out of reach.
    let target = c.rho;
    spec.clone()
        .with_rho(target.clamp(0.0, MAX_TARGET))
        .validate()?;
    if !(0.0..1.0).contains(&target) {
        return Err(SimError::InvalidSpec(format!(
            "rho must lie in [0, 1), got {target}"
        )));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    // Common random numbers across all evaluations of the objective.
    let mut rng = RngStream::new(settings.seed, 0).rng();
    let d = gen_exposure_from(&spec.exposure, settings.draws, &mut rng);
    let z: Vec<(f64, f64)> = (0..settings.draws)
        .map(|_| {
            (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        })
        .collect();
    let x: Vec<u64> = z
        .iter()
        .map(|(z1, _)| nb_quantile(norm_cdf(*z1), c.r_x, c.k_x))
        .collect();
    let (rate, k) = (c.rates[0], c.dispersions[0]);
    let objective = |rho: f64| -> f64 {
        let s = (1.0 - rho * rho).sqrt();
        let triples: Vec<CountTriple> = z
            .iter()
            .zip(&d)
            .zip(&x)
            .map(|(((z1, z2), &d), &x)| CountTriple {
                x,
                y: nb_quantile(norm_cdf(rho * z1 + s * z2), rate * d, k),
                d,
            })
            .collect();
        realized_correlation(&triples)
    };

    let top = objective(UPPER_LATENT);
    if top < target - settings.tol {
        return Err(SimError::Unachievable {
            target,
            max_achievable: top,
        });
    }
    if target > MAX_TARGET {
        return Err(SimError::InvalidSpec(format!(
            "rho must lie in [0, {MAX_TARGET}], got {target}"
        )));
    }
    let (mut lo, mut hi) = (0.0, UPPER_LATENT);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..60 {
        mid = 0.5 * (lo + hi);
        let f = objective(mid);
        if (f - target).abs() < settings.tol {
            return Ok(mid);
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}
