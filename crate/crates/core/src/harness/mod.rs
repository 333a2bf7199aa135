//! Replicated simulation studies.
//!
//! Each replicate draws one dataset from its own [`RngStream`] and applies
//! every method. Replicates run on a rayon pool but are reduced in index
//! order, so summaries do not depend on the number of workers. A method that
//! fails on a replicate counts as "not rejected" and is tallied separately.

mod cache;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{Calibrated, CalibrationCache};

use crate::domain::{Alternative, Dataset, RateRatioResult};
use crate::empirical::{analyze, Adjustment, InferenceConfig};
use crate::linmod::HcFlavor;
use crate::nbglm::{
    fit_nb_with, marginal_rates_aipw, marginal_rates_gcomp, nb_rate_ratio, nb_rate_ratio_from_fit,
    NbError, NbOptions, PearsonTarget,
};
use crate::simgen::{
    calibrate_with, gen_dataset, CalibrationSettings, OutcomeModel, RngStream, ScenarioSpec,
    SimError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Nb,
    Empirical,
}

/// How the NB rate ratio is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NbContrast {
    /// `exp(beta_1 - beta_0)`.
    #[default]
    Coefficient,
    Gcomp,
    Aipw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub estimator: Estimator,
    /// Adjusts for every covariate in the dataset.
    pub adjusted: bool,
    /// Empirical method only; `None` picks by arm size.
    pub hc_flavor: Option<HcFlavor>,
    pub pearson_target: PearsonTarget,
    pub nb_contrast: NbContrast,
}

impl MethodSpec {
    fn preset(name: &str, estimator: Estimator, adjusted: bool) -> Self {
        Self {
            name: name.into(),
            estimator,
            adjusted,
            hc_flavor: None,
            pearson_target: PearsonTarget::Sandwich,
            nb_contrast: NbContrast::Coefficient,
        }
    }

    pub fn unadjusted_nb() -> Self {
        Self::preset("nb_unadjusted", Estimator::Nb, false)
    }

    pub fn adjusted_nb() -> Self {
        Self::preset("nb_adjusted", Estimator::Nb, true)
    }

    pub fn unadjusted_empirical() -> Self {
        Self::preset("empirical_unadjusted", Estimator::Empirical, false)
    }

    pub fn adjusted_empirical() -> Self {
        Self::preset("empirical_adjusted", Estimator::Empirical, true)
    }

    /// The four standard methods.
    pub fn standard() -> Vec<Self> {
        vec![
            Self::unadjusted_nb(),
            Self::adjusted_nb(),
            Self::unadjusted_empirical(),
            Self::adjusted_empirical(),
        ]
    }
}

/// Result of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MethodOutcome {
    Estimated {
        result: RateRatioResult,
        boundary_dispersion: bool,
    },
    NonConvergence {
        reason: String,
    },
    Failed {
        reason: String,
    },
}

impl MethodOutcome {
    pub fn result(&self) -> Option<&RateRatioResult> {
        match self {
            MethodOutcome::Estimated { result, .. } => Some(result),
            _ => None,
        }
    }

    pub fn rejects(&self) -> bool {
        self.result().is_some_and(RateRatioResult::rejects)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub stream: RngStream,
    pub outcomes: Vec<MethodOutcome>,
    /// Correlation between the first covariate and the outcome count.
    pub covariate_correlation: f64,
}

/// Applies `method` to `data`, comparing arm 1 with arm 0.
pub fn apply_method(data: &Dataset, method: &MethodSpec, alpha: f64) -> MethodOutcome {
    match method.estimator {
        Estimator::Empirical => {
            let adjustment = if method.adjusted {
                Adjustment::Ancova
            } else {
                Adjustment::None
            };
            let cfg = InferenceConfig {
                alpha,
                adjustment,
                hc_flavor: method.hc_flavor,
                alternative: Alternative::TwoSided,
                ..InferenceConfig::default()
            };
            match analyze(data, &cfg, 1, 0) {
                Ok((_, result)) => MethodOutcome::Estimated {
                    result,
                    boundary_dispersion: false,
                },
                Err(e) => MethodOutcome::Failed {
                    reason: e.to_string(),
                },
            }
        }
        Estimator::Nb => {
            let opts = NbOptions {
                pearson_target: method.pearson_target,
                ..NbOptions::default()
            };
            let (fit, boundary) = match fit_nb_with(data, &[], method.adjusted, &opts) {
                Ok(fit) => (fit, false),
                // k = 0 maximizes the likelihood; the Poisson fit is the MLE.
                Err(NbError::BoundaryDispersion(fit)) => (*fit, true),
                Err(NbError::NonConvergence(d)) => {
                    return MethodOutcome::NonConvergence { reason: d.reason }
                }
                Err(e) => {
                    return MethodOutcome::Failed {
                        reason: e.to_string(),
                    }
                }
            };
            let rr = match method.nb_contrast {
                NbContrast::Coefficient => {
                    nb_rate_ratio_from_fit(&fit, 1, 0, alpha, Alternative::TwoSided)
                }
                NbContrast::Gcomp => nb_rate_ratio(
                    &marginal_rates_gcomp(&fit),
                    1,
                    0,
                    alpha,
                    Alternative::TwoSided,
                ),
                NbContrast::Aipw => marginal_rates_aipw(&fit)
                    .and_then(|m| nb_rate_ratio(&m, 1, 0, alpha, Alternative::TwoSided)),
            };
            match rr {
                Ok(result) => MethodOutcome::Estimated {
                    result,
                    boundary_dispersion: boundary,
                },
                Err(e) => MethodOutcome::Failed {
                    reason: e.to_string(),
                },
            }
        }
    }
}

fn covariate_correlation(data: &Dataset) -> f64 {
    if data.covariate_count() == 0 {
        return f64::NAN;
    }
    let n = data.len() as f64;
    let xs: Vec<f64> = data.records().iter().map(|r| r.covariates[0]).collect();
    let ys: Vec<f64> = data.records().iter().map(|r| r.count as f64).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Generates the dataset for `stream` and applies every method.
pub fn run_replicate(
    spec: &ScenarioSpec,
    latent_rho: f64,
    methods: &[MethodSpec],
    stream: RngStream,
    alpha: f64,
) -> Result<ReplicateResult, SimError> {
    let data = gen_dataset(spec, latent_rho, stream)?;
    Ok(ReplicateResult {
        stream,
        outcomes: methods
            .iter()
            .map(|m| apply_method(&data, m, alpha))
            .collect(),
        covariate_correlation: covariate_correlation(&data),
    })
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub reps: usize,
    pub seed: u64,
    pub jobs: usize,
    pub alpha: f64,
    pub calibration: CalibrationSettings,
    /// Directory for cached calibrations; `None` always recalibrates.
    pub cache_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            reps: 2000,
            seed: 1,
            jobs: 1,
            alpha: 0.05,
            calibration: CalibrationSettings::default(),
            cache_dir: None,
        }
    }
}

/// Per-method aggregate over all replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: MethodSpec,
    pub replicates: usize,
    /// Replicates that produced an estimate.
    pub estimated: usize,
    pub rejections: usize,
    /// Rejections over all replicates, failures counted as non-rejections.
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_lambda: f64,
    pub mean_theta: f64,
    pub sd_theta: f64,
    pub mean_se: f64,
    /// Share of estimated replicates whose interval covers the true ratio.
    pub coverage: f64,
    pub nonconvergence: usize,
    pub boundary_dispersion: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub scenario: ScenarioSpec,
    pub latent_rho: f64,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub true_rate_ratio: f64,
    /// Mean over replicates of corr(first covariate, count).
    pub mean_covariate_correlation: f64,
    pub methods: Vec<MethodSummary>,
}

/// One CSV row per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub case: String,
    pub n_per_arm: usize,
    pub rho: Option<f64>,
    pub latent_rho: f64,
    pub true_rate_ratio: f64,
    pub method: String,
    pub reps: usize,
    pub estimated: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_lambda: f64,
    pub mean_theta: f64,
    pub sd_theta: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub nonconvergence: usize,
    pub boundary_dispersion: usize,
    pub failures: usize,
}

impl SimulationSummary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method.name == name)
    }

    pub fn rows(&self) -> Vec<SummaryRow> {
        self.methods
            .iter()
            .map(|m| SummaryRow {
                case: self.scenario.case_id.clone(),
                n_per_arm: self.scenario.n_per_arm,
                rho: self.scenario.rho(),
                latent_rho: self.latent_rho,
                true_rate_ratio: self.true_rate_ratio,
                method: m.method.name.clone(),
                reps: m.replicates,
                estimated: m.estimated,
                rejection_rate: m.rejection_rate,
                mc_se: m.mc_se,
                mean_lambda: m.mean_lambda,
                mean_theta: m.mean_theta,
                sd_theta: m.sd_theta,
                mean_se: m.mean_se,
                coverage: m.coverage,
                nonconvergence: m.nonconvergence,
                boundary_dispersion: m.boundary_dispersion,
                failures: m.failures,
            })
            .collect()
    }
}

/// Aggregates replicate results in order.
pub fn summarize(
    spec: &ScenarioSpec,
    latent_rho: f64,
    methods: &[MethodSpec],
    replicates: &[ReplicateResult],
    seed: u64,
    alpha: f64,
) -> SimulationSummary {
    let reps = replicates.len();
    let truth = spec.true_rate_ratio();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let mut s = MethodSummary {
                method: method.clone(),
                replicates: reps,
                estimated: 0,
                rejections: 0,
                rejection_rate: 0.0,
                mc_se: 0.0,
                mean_lambda: f64::NAN,
                mean_theta: f64::NAN,
                sd_theta: f64::NAN,
                mean_se: f64::NAN,
                coverage: f64::NAN,
                nonconvergence: 0,
                boundary_dispersion: 0,
                failures: 0,
            };
            let mut thetas = Vec::new();
            let (mut lambda_sum, mut se_sum, mut covered) = (0.0, 0.0, 0usize);
            for r in replicates {
                match &r.outcomes[m] {
                    MethodOutcome::Estimated {
                        result,
                        boundary_dispersion,
                    } => {
                        s.estimated += 1;
                        s.boundary_dispersion += usize::from(*boundary_dispersion);
                        s.rejections += usize::from(result.rejects());
                        lambda_sum += result.lambda_hat;
                        se_sum += result.se_log;
                        covered += usize::from(result.covers(truth));
                        thetas.push(result.log_lambda());
                    }
                    MethodOutcome::NonConvergence { .. } => s.nonconvergence += 1,
                    MethodOutcome::Failed { .. } => s.failures += 1,
                }
            }
            if reps > 0 {
                let p = s.rejections as f64 / reps as f64;
                s.rejection_rate = p;
                s.mc_se = (p * (1.0 - p) / reps as f64).sqrt();
            }
            if s.estimated > 0 {
                let k = s.estimated as f64;
                s.mean_lambda = lambda_sum / k;
                s.mean_se = se_sum / k;
                s.coverage = covered as f64 / k;
                let mean = thetas.iter().sum::<f64>() / k;
                s.mean_theta = mean;
                s.sd_theta = if s.estimated > 1 {
                    (thetas.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (k - 1.0)).sqrt()
                } else {
                    0.0
                };
            }
            s
        })
        .collect();
    let corrs: Vec<f64> = replicates
        .iter()
        .map(|r| r.covariate_correlation)
        .filter(|c| c.is_finite())
        .collect();
    SimulationSummary {
        scenario: spec.clone(),
        latent_rho,
        reps,
        seed,
        alpha,
        true_rate_ratio: truth,
        mean_covariate_correlation: if corrs.is_empty() {
            f64::NAN
        } else {
            corrs.iter().sum::<f64>() / corrs.len() as f64
        },
        methods: summaries,
    }
}

/// Latent correlation for `spec`, through the cache when configured.
pub fn resolve_latent_rho(spec: &ScenarioSpec, cfg: &StudyConfig) -> Result<f64, SimError> {
    if !matches!(spec.outcome, OutcomeModel::Copula(_)) {
        return Ok(0.0);
    }
    match &cfg.cache_dir {
        Some(dir) => {
            let (c, _write_err) =
                CalibrationCache::new(dir).get_or_calibrate(spec, &cfg.calibration)?;
            Ok(c.latent_rho)
        }
        None => calibrate_with(spec, &cfg.calibration),
    }
}

/// Runs all replicates of a study with a known latent correlation.
pub fn run_replicates(
    spec: &ScenarioSpec,
    latent_rho: f64,
    methods: &[MethodSpec],
    cfg: &StudyConfig,
) -> Result<Vec<ReplicateResult>, SimError> {
    spec.validate()?;
    let work = |i: usize| {
        run_replicate(
            spec,
            latent_rho,
            methods,
            RngStream::new(cfg.seed, i as u64),
            cfg.alpha,
        )
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| SimError::InvalidSpec(format!("thread pool: {e}")))?;
    pool.install(|| (0..cfg.reps).into_par_iter().map(work).collect())
}

/// Calibrates (once) and runs `cfg.reps` replicates of `spec`.
pub fn run_study(
    spec: &ScenarioSpec,
    methods: &[MethodSpec],
    cfg: &StudyConfig,
) -> Result<SimulationSummary, SimError> {
    if cfg.reps == 0 {
        return Err(SimError::InvalidSpec(
            "at least one replicate is required".into(),
        ));
    }
    let latent = resolve_latent_rho(spec, cfg)?;
    let reps = run_replicates(spec, latent, methods, cfg)?;
    Ok(summarize(spec, latent, methods, &reps, cfg.seed, cfg.alpha))
}
