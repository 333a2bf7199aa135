//! The empirical rate estimator.
//!
//! Counts are rescaled by the arm's mean follow-up, `W_ij = Y_ij / dbar_i`, so
//! that the arm mean of `W` is exactly the aggregated rate `Y_i. / d_i.`. Arm
//! rates then come out of a linear model for `W` on cell-means arm indicators
//! (optionally with centered baseline covariates), with robust sandwich
//! covariance. Rate ratios are formed on the log scale.
//!
//! # Covariance of covariate-adjusted rates
//!
//! Covariates are centered at their pooled sample mean, so each arm coefficient
//! is the arm's marginal rate. The arm block of the HC sandwich treats that
//! sample mean as fixed; the remaining variability is added by propagating it
//! through the fitted slopes. With `g_j = X_j - Xbar`, slope vector `b_a` used
//! for arm `a` (shared across arms for ANCOVA, arm-specific for ANHECOVA),
//! `e_j` the residual and `n_a` the arm size, the added term is
//!
//! ```text
//! P_ab = n^-2 sum_j [ (b_a'g_j)(b_b'g_j)
//!                     + 1{A_j=a} e_j (n/n_a) (b_b'g_j)
//!                     + 1{A_j=b} e_j (n/n_b) (b_a'g_j) ]
//! ```
//!
//! For ANHECOVA under stratified randomization the between-stratum component
//! of the residual variance is removed:
//!
//! ```text
//! R_ab = n^-1 sum_s p_s rbar_a(s) rbar_b(s) (1{a=b}/pi_a - 1)
//! ```
//!
//! where `p_s` is the stratum share, `pi_a = n_a/n` and `rbar_a(s)` the mean
//! residual of arm `a` in stratum `s`. `R` vanishes identically when stratum
//! indicators are part of the interaction model (the default), and carries the
//! correction when they are left out.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Alternative, Dataset, LogRateEstimate, MethodTag, RateEstimate, RateRatioResult,
};
use crate::linmod::{self, DesignMatrix, HcFlavor, LinModError};
use crate::stats::{from_rows, norm_cdf, norm_quantile, norm_sf, symmetrize, to_rows};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    LinMod(#[from] LinModError),
    #[error("arm {arm} has no events; its log rate is undefined")]
    ZeroEventsArm { arm: usize },
    #[error("arm {arm} has non-positive estimated rate {rate}")]
    NonPositiveRate { arm: usize, rate: f64 },
    #[error("variance of the log rate ratio is not positive ({variance})")]
    DegenerateVariance { variance: f64 },
    #[error("covariate adjustment requested but the dataset has no covariates")]
    NoCovariates,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("arm index {arm} out of range for {arm_count} arms")]
    ArmOutOfRange { arm: usize, arm_count: usize },
}

/// Transformed subject-level outcomes `W_ij = Y_ij / dbar_i`, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct WVector {
    pub values: Vec<f64>,
    pub arm_mean_exposures: Vec<f64>,
}

/// Linear-model adjustment used for the arm rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    #[default]
    None,
    Ancova,
    Anhecova,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub alpha: f64,
    pub adjustment: Adjustment,
    /// `None` picks HC3 below 250 subjects per arm and HC1 otherwise.
    pub hc_flavor: Option<HcFlavor>,
    pub alternative: Alternative,
    /// ANHECOVA: include stratum indicators in the interaction model.
    pub strata_in_design: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            adjustment: Adjustment::None,
            hc_flavor: None,
            alternative: Alternative::TwoSided,
            strata_in_design: true,
        }
    }
}

impl InferenceConfig {
    pub fn with_adjustment(adjustment: Adjustment) -> Self {
        Self {
            adjustment,
            ..Self::default()
        }
    }

    pub fn resolved_flavor(&self, data: &Dataset) -> HcFlavor {
        self.hc_flavor.unwrap_or_else(|| {
            HcFlavor::auto(data.aggregates().iter().map(|a| a.n).min().unwrap_or(0))
        })
    }
}

pub fn transform_w(data: &Dataset) -> WVector {
    let arm_mean_exposures: Vec<f64> = data
        .aggregates()
        .iter()
        .map(|a| a.mean_exposure())
        .collect();
    let values = data
        .records()
        .iter()
        .map(|r| r.count as f64 / arm_mean_exposures[r.arm])
        .collect();
    WVector {
        values,
        arm_mean_exposures,
    }
}

fn zero_event_arms(data: &Dataset) -> Vec<usize> {
    data.aggregates()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.events == 0)
        .map(|(i, _)| i)
        .collect()
}

/// `Y_i. / d_i.` per arm, with covariance `diag(s^2(W_i) / n_i)`.
pub fn aggregated_rates(data: &Dataset) -> RateEstimate {
    let w = transform_w(data);
    let arms = data.arm_count();
    let mut sums = vec![0.0; arms];
    let mut sq = vec![0.0; arms];
    let rates: Vec<f64> = data.aggregates().iter().map(|a| a.rate()).collect();
    for (r, &wv) in data.records().iter().zip(&w.values) {
        let dev = wv - rates[r.arm];
        sums[r.arm] += dev;
        sq[r.arm] += dev * dev;
    }
    let mut cov = vec![vec![0.0; arms]; arms];
    for (a, agg) in data.aggregates().iter().enumerate() {
        let n = agg.n as f64;
        let var = (sq[a] - sums[a] * sums[a] / n) / (n - 1.0);
        cov[a][a] = var / n;
    }
    RateEstimate {
        rates,
        cov,
        method_tag: MethodTag::Aggregated,
        zero_event_arms: zero_event_arms(data),
    }
}

/// Centered covariate block used by the adjusted models, one row per subject.
struct CovariateBlock {
    centered: DMatrix<f64>,
    names: Vec<String>,
    strata: Option<Vec<usize>>,
    stratum_count: usize,
}

fn covariate_block(data: &Dataset, with_strata: bool) -> CovariateBlock {
    let n = data.len();
    let mut columns: Vec<Vec<f64>> = (0..data.covariate_count())
        .map(|c| data.records().iter().map(|r| r.covariates[c]).collect())
        .collect();
    let mut names: Vec<String> = data.covariate_names().to_vec();

    let (strata, stratum_count) = if data.has_strata() {
        let mut levels = BTreeMap::new();
        for r in data.records() {
            let next = levels.len();
            levels.entry(r.stratum.clone().unwrap()).or_insert(next);
        }
        // Index levels in sorted order so results do not depend on record order.
        let sorted: BTreeMap<String, usize> = levels
            .keys()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let idx: Vec<usize> = data
            .records()
            .iter()
            .map(|r| sorted[r.stratum.as_ref().unwrap()])
            .collect();
        if with_strata {
            for (label, &level) in sorted.iter().skip(1) {
                columns.push(
                    idx.iter()
                        .map(|&s| f64::from(u8::from(s == level)))
                        .collect(),
                );
                names.push(format!("stratum[{label}]"));
            }
        }
        (Some(idx), sorted.len())
    } else {
        (None, 0)
    };

    let q = columns.len();
    let mut centered = DMatrix::zeros(n, q);
    for (c, col) in columns.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        for (j, v) in col.iter().enumerate() {
            centered[(j, c)] = v - mean;
        }
    }
    CovariateBlock {
        centered,
        names,
        strata,
        stratum_count,
    }
}

/// Arm rates from the linear model for `W`.
pub fn estimate_rates(
    data: &Dataset,
    cfg: &InferenceConfig,
) -> Result<RateEstimate, EstimationError> {
    validate_alpha(cfg.alpha)?;
    let mut adjustment = cfg.adjustment;
    if adjustment == Adjustment::Anhecova && !data.has_strata() {
        adjustment = Adjustment::Ancova;
    }
    if adjustment == Adjustment::Ancova && data.covariate_count() == 0 {
        return Err(EstimationError::NoCovariates);
    }

    let n = data.len();
    let arms = data.arm_count();
    let w = transform_w(data);
    let arm_of: Vec<usize> = data.records().iter().map(|r| r.arm).collect();
    let arm_sizes: Vec<f64> = data.aggregates().iter().map(|a| a.n as f64).collect();

    let block = match adjustment {
        Adjustment::None => None,
        Adjustment::Ancova => Some(covariate_block(data, false)),
        Adjustment::Anhecova => Some(covariate_block(data, cfg.strata_in_design)),
    };
    let q = block.as_ref().map_or(0, |b| b.centered.ncols());
    let interacted = adjustment == Adjustment::Anhecova;
    let slope_cols = if interacted { arms * q } else { q };

    let mut x = DMatrix::zeros(n, arms + slope_cols);
    let mut names: Vec<String> = (0..arms).map(|a| format!("arm{a}")).collect();
    for (j, &a) in arm_of.iter().enumerate() {
        x[(j, a)] = 1.0;
    }
    if let Some(b) = &block {
        if interacted {
            for a in 0..arms {
                names.extend(b.names.iter().map(|c| format!("arm{a}:{c}")));
            }
            for (j, &a) in arm_of.iter().enumerate() {
                for c in 0..q {
                    x[(j, arms + a * q + c)] = b.centered[(j, c)];
                }
            }
        } else {
            names.extend(b.names.iter().cloned());
            for j in 0..n {
                for c in 0..q {
                    x[(j, arms + c)] = b.centered[(j, c)];
                }
            }
        }
    }

    let design = DesignMatrix::new(x, names);
    let fit = linmod::fit_ols(&design, &w.values)?;
    let flavor = cfg.resolved_flavor(data);
    let hc = linmod::hc_covariance(&fit, flavor)?;
    let mut cov = hc.view((0, 0), (arms, arms)).into_owned();

    if let Some(b) = &block {
        // slopes[a] is the covariate slope vector applied to arm a
        let slopes: Vec<DVector<f64>> = (0..arms)
            .map(|a| {
                let start = if interacted { arms + a * q } else { arms };
                fit.coef.rows(start, q).into_owned()
            })
            .collect();
        let mut prop = DMatrix::<f64>::zeros(arms, arms);
        let mut v = vec![0.0; arms];
        for j in 0..n {
            let g = b.centered.row(j);
            for (a, s) in slopes.iter().enumerate() {
                v[a] = (0..q).map(|c| s[c] * g[c]).sum();
            }
            let aj = arm_of[j];
            let u = fit.residuals[j] * n as f64 / arm_sizes[aj];
            for a in 0..arms {
                for c in 0..arms {
                    let mut t = v[a] * v[c];
                    if a == aj {
                        t += u * v[c];
                    }
                    if c == aj {
                        t += u * v[a];
                    }
                    prop[(a, c)] += t;
                }
            }
        }
        cov += prop / (n as f64 * n as f64);

        if interacted {
            if let Some(strata) = &b.strata {
                cov -= stratified_correction(
                    &fit.residuals,
                    &arm_of,
                    strata,
                    b.stratum_count,
                    &arm_sizes,
                );
            }
        }
    }
    symmetrize(&mut cov);

    let mut rates: Vec<f64> = fit.coef.rows(0, arms).iter().copied().collect();
    let zero_arms = zero_event_arms(data);
    if adjustment == Adjustment::None {
        for &a in &zero_arms {
            rates[a] = 0.0;
        }
    }

    Ok(RateEstimate {
        rates,
        cov: to_rows(&cov),
        method_tag: match adjustment {
            Adjustment::None => MethodTag::Aggregated,
            Adjustment::Ancova => MethodTag::Ancova,
            Adjustment::Anhecova => MethodTag::Anhecova,
        },
        zero_event_arms: zero_arms,
    })
}

fn stratified_correction(
    residuals: &DVector<f64>,
    arm_of: &[usize],
    strata: &[usize],
    stratum_count: usize,
    arm_sizes: &[f64],
) -> DMatrix<f64> {
    let arms = arm_sizes.len();
    let n = arm_of.len() as f64;
    let mut sums = DMatrix::<f64>::zeros(stratum_count, arms);
    let mut counts = DMatrix::<f64>::zeros(stratum_count, arms);
    let mut stratum_n = vec![0.0; stratum_count];
    for j in 0..arm_of.len() {
        sums[(strata[j], arm_of[j])] += residuals[j];
        counts[(strata[j], arm_of[j])] += 1.0;
        stratum_n[strata[j]] += 1.0;
    }
    let mut out = DMatrix::zeros(arms, arms);
    for s in 0..stratum_count {
        let share = stratum_n[s] / n;
        let rbar: Vec<f64> = (0..arms)
            .map(|a| {
                if counts[(s, a)] > 0.0 {
                    sums[(s, a)] / counts[(s, a)]
                } else {
                    0.0
                }
            })
            .collect();
        for a in 0..arms {
            for b in 0..arms {
                let omega = if a == b { n / arm_sizes[a] - 1.0 } else { -1.0 };
                out[(a, b)] += share * rbar[a] * rbar[b] * omega;
            }
        }
    }
    out / n
}

/// Delta-method transform to the log scale.
pub fn log_rates(est: &RateEstimate) -> Result<LogRateEstimate, EstimationError> {
    if let Some(&arm) = est.zero_event_arms.first() {
        return Err(EstimationError::ZeroEventsArm { arm });
    }
    if let Some((arm, &rate)) = est
        .rates
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.is_finite() && **r > 0.0))
    {
        return Err(EstimationError::NonPositiveRate { arm, rate });
    }
    let k = est.rates.len();
    let theta = est.rates.iter().map(|r| r.ln()).collect();
    let cov_theta = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| est.cov[a][b] / (est.rates[a] * est.rates[b]))
                .collect()
        })
        .collect();
    Ok(LogRateEstimate { theta, cov_theta })
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<(), EstimationError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(EstimationError::InvalidAlpha(alpha))
    }
}

/// Rate ratio `r_i / r_k` with z-test and exponentiated log-scale CI.
///
/// `i == k` yields the identity comparison (`lambda = 1`, `p = 1`).
pub fn rate_ratio(
    est: &LogRateEstimate,
    i: usize,
    k: usize,
    alpha: f64,
    alternative: Alternative,
) -> Result<RateRatioResult, EstimationError> {
    validate_alpha(alpha)?;
    let arm_count = est.theta.len();
    for arm in [i, k] {
        if arm >= arm_count {
            return Err(EstimationError::ArmOutOfRange { arm, arm_count });
        }
    }
    if i == k {
        return Ok(RateRatioResult {
            numerator_arm: i,
            denominator_arm: k,
            lambda_hat: 1.0,
            ci_low: 1.0,
            ci_high: 1.0,
            se_log: 0.0,
            z: 0.0,
            p: 1.0,
            alpha,
            alternative,
        });
    }
    let v = &est.cov_theta;
    let var = v[i][i] + v[k][k] - 2.0 * v[i][k];
    let scale = v[i][i].abs() + v[k][k].abs();
    if !(var.is_finite() && var > 1e-14 * scale && var > 0.0) {
        return Err(EstimationError::DegenerateVariance { variance: var });
    }
    Ok(log_scale_result(
        i,
        k,
        est.theta[i] - est.theta[k],
        var,
        alpha,
        alternative,
    ))
}

/// z-test and back-transformed interval for a log rate ratio `diff` with
/// variance `var > 0`.
pub(crate) fn log_scale_result(
    i: usize,
    k: usize,
    diff: f64,
    var: f64,
    alpha: f64,
    alternative: Alternative,
) -> RateRatioResult {
    let se = var.sqrt();
    let z = diff / se;
    let lambda_hat = diff.exp();
    let (p, ci_low, ci_high) = match alternative {
        Alternative::TwoSided => {
            let q = norm_quantile(1.0 - alpha / 2.0);
            (
                (2.0 * norm_sf(z.abs())).min(1.0),
                lambda_hat * (-q * se).exp(),
                lambda_hat * (q * se).exp(),
            )
        }
        Alternative::Less => {
            let q = norm_quantile(1.0 - alpha);
            (norm_cdf(z), 0.0, lambda_hat * (q * se).exp())
        }
        Alternative::Greater => {
            let q = norm_quantile(1.0 - alpha);
            (norm_sf(z), lambda_hat * (-q * se).exp(), f64::INFINITY)
        }
    };
    RateRatioResult {
        numerator_arm: i,
        denominator_arm: k,
        lambda_hat,
        ci_low,
        ci_high,
        se_log: se,
        z,
        p,
        alpha,
        alternative,
    }
}

/// Estimates rates under `cfg` and compares arm `i` with arm `k`.
pub fn analyze(
    data: &Dataset,
    cfg: &InferenceConfig,
    i: usize,
    k: usize,
) -> Result<(RateEstimate, RateRatioResult), EstimationError> {
    let est = estimate_rates(data, cfg)?;
    let logs = log_rates(&est)?;
    let rr = rate_ratio(&logs, i, k, cfg.alpha, cfg.alternative)?;
    Ok((est, rr))
}

/// Mean of per-subject rates `Y_ij / d_ij`. Diagnostic only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveRates {
    pub rates: Vec<f64>,
    /// Always true: this estimator is dominated by the aggregated rate when
    /// follow-up varies between subjects.
    pub not_recommended: bool,
}

pub fn naive_subject_rate(data: &Dataset) -> NaiveRates {
    let mut sums = vec![0.0; data.arm_count()];
    for r in data.records() {
        sums[r.arm] += r.count as f64 / r.exposure;
    }
    let rates = sums
        .iter()
        .zip(data.aggregates())
        .map(|(s, a)| s / a.n as f64)
        .collect();
    NaiveRates {
        rates,
        not_recommended: true,
    }
}

/// Covariance of `est` as a matrix.
pub fn cov_matrix(est: &RateEstimate) -> DMatrix<f64> {
    from_rows(&est.cov)
}
