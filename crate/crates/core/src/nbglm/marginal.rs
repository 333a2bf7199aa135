use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{NbError, NbFit};
use crate::domain::{Alternative, LogRateEstimate, MethodTag, RateEstimate, RateRatioResult};
use crate::empirical::{log_rates, rate_ratio};
use crate::stats::{symmetrize, to_rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gcomp,
    Aipw,
}

/// Model-based marginal rates per arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRates {
    pub rates: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub estimator_kind: EstimatorKind,
}

impl MarginalRates {
    pub fn to_rate_estimate(&self) -> RateEstimate {
        RateEstimate {
            rates: self.rates.clone(),
            cov: self.cov.clone(),
            method_tag: match self.estimator_kind {
                EstimatorKind::Gcomp => MethodTag::NbGcomp,
                EstimatorKind::Aipw => MethodTag::NbAipw,
            },
            zero_event_arms: Vec::new(),
        }
    }
}

/// Predicted counts `d_j exp(x_j(a)'beta)` for every subject under every arm.
fn counterfactual_counts(fit: &NbFit) -> Vec<Vec<f64>> {
    let design = &fit.design;
    (0..design.arms)
        .map(|a| {
            (0..design.n())
                .map(|j| design.exposure[j] * design.counterfactual_rate(&fit.beta, j, a))
                .collect()
        })
        .collect()
}

/// G-computation: average each subject's predicted rate under arm `a` over the
/// whole sample. Covariance by the delta method through `beta`.
pub fn marginal_rates_gcomp(fit: &NbFit) -> MarginalRates {
    let design = &fit.design;
    let arms = design.arms;
    let p = design.p();
    let total: f64 = design.exposure.iter().sum();
    let preds = counterfactual_counts(fit);
    let mut rates = vec![0.0; arms];
    let mut grad = DMatrix::<f64>::zeros(arms, p);
    for a in 0..arms {
        for j in 0..design.n() {
            let y = preds[a][j];
            rates[a] += y;
            grad[(a, a)] += y;
            for c in arms..p {
                grad[(a, c)] += y * design.x[(j, c)];
            }
        }
        rates[a] /= total;
    }
    grad /= total;
    let mut cov = &grad * &fit.pearson_scaled_cov * grad.transpose();
    symmetrize(&mut cov);
    MarginalRates {
        rates,
        cov: to_rows(&cov),
        estimator_kind: EstimatorKind::Gcomp,
    }
}

/// AIPW: G-computation totals plus inverse-propensity-weighted residual
/// totals of the subjects actually in each arm, with propensities `n_a/n`.
///
/// Covariance is the empirical second moment of the per-subject influence
/// values `(yhat_aj + 1{A_j=a}(n/n_a)(y_j - yhat_aj) - r_a d_j) / dbar`.
pub fn marginal_rates_aipw(fit: &NbFit) -> Result<MarginalRates, NbError> {
    let design = &fit.design;
    let arms = design.arms;
    let n = design.n();
    let mut arm_n = vec![0usize; arms];
    for &a in &design.arm_of {
        arm_n[a] += 1;
    }
    if let Some(arm) = arm_n.iter().position(|&c| c == 0) {
        return Err(NbError::EmptyArm { arm });
    }
    let total: f64 = design.exposure.iter().sum();
    let dbar = total / n as f64;
    let preds = counterfactual_counts(fit);
    let weight: Vec<f64> = arm_n.iter().map(|&c| n as f64 / c as f64).collect();

    let mut psi = DMatrix::<f64>::zeros(n, arms);
    let mut rates = vec![0.0; arms];
    for a in 0..arms {
        for j in 0..n {
            let mut v = preds[a][j];
            if design.arm_of[j] == a {
                v += weight[a] * (design.y[j] as f64 - preds[a][j]);
            }
            psi[(j, a)] = v;
            rates[a] += v;
        }
        rates[a] /= total;
    }
    for a in 0..arms {
        for j in 0..n {
            psi[(j, a)] = (psi[(j, a)] - rates[a] * design.exposure[j]) / dbar;
        }
    }
    let mut cov = psi.transpose() * &psi / (n as f64 * n as f64);
    symmetrize(&mut cov);
    Ok(MarginalRates {
        rates,
        cov: to_rows(&cov),
        estimator_kind: EstimatorKind::Aipw,
    })
}

/// Rate ratio between marginal rates, delta method on the log scale.
pub fn nb_rate_ratio(
    marg: &MarginalRates,
    i: usize,
    k: usize,
    alpha: f64,
    alternative: Alternative,
) -> Result<RateRatioResult, NbError> {
    let logs = log_rates(&marg.to_rate_estimate())?;
    Ok(rate_ratio(&logs, i, k, alpha, alternative)?)
}

/// Rate ratio `exp(beta_i - beta_k)` read directly from the arm coefficients,
/// using the Pearson-scaled robust covariance.
pub fn nb_rate_ratio_from_fit(
    fit: &NbFit,
    i: usize,
    k: usize,
    alpha: f64,
    alternative: Alternative,
) -> Result<RateRatioResult, NbError> {
    let arms = fit.design.arms;
    let cov = super::robust_covariance(fit)?;
    let logs = LogRateEstimate {
        theta: fit.beta[..arms].to_vec(),
        cov_theta: (0..arms)
            .map(|a| (0..arms).map(|b| cov[(a, b)]).collect())
            .collect(),
    };
    Ok(rate_ratio(&logs, i, k, alpha, alternative)?)
}
