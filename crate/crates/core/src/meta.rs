//! Exposure-weighted pooling of rate ratios across strata.
//!
//! [`pool_natural`] averages the ratios themselves; [`pool_log`] averages log
//! ratios. Both report the interval on the log scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Alternative, RateRatioResult};
use crate::empirical::{log_scale_result, validate_alpha, EstimationError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("no strata to pool")]
    EmptyInput,
    #[error("stratum {stratum}: rate ratio {lambda} must be positive")]
    NonPositiveLambda { stratum: String, lambda: f64 },
    #[error("stratum {stratum}: weight {weight} must be positive")]
    NonPositiveWeight { stratum: String, weight: f64 },
    #[error("stratum {stratum}: variance {variance} must be nonnegative")]
    NegativeVariance { stratum: String, variance: f64 },
    #[error("pooled variance is zero")]
    DegenerateVariance,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

/// One stratum's rate ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub stratum: String,
    pub lambda_hat: f64,
    pub var_lambda: f64,
    /// Total follow-up in the stratum.
    pub weight: f64,
    /// `(ln lambda, Var(ln lambda))` when available; otherwise derived by the
    /// delta method.
    #[serde(default)]
    pub log_pair: Option<(f64, f64)>,
}

impl StratumResult {
    pub fn new(stratum: impl Into<String>, lambda_hat: f64, var_lambda: f64, weight: f64) -> Self {
        Self {
            stratum: stratum.into(),
            lambda_hat,
            var_lambda,
            weight,
            log_pair: None,
        }
    }

    /// From log-scale inputs; the natural-scale variance follows by the delta method.
    pub fn from_log(
        stratum: impl Into<String>,
        log_lambda: f64,
        var_log: f64,
        weight: f64,
    ) -> Self {
        let lambda = log_lambda.exp();
        Self {
            stratum: stratum.into(),
            lambda_hat: lambda,
            var_lambda: var_log * lambda * lambda,
            weight,
            log_pair: Some((log_lambda, var_log)),
        }
    }

    fn log_scale(&self) -> (f64, f64) {
        self.log_pair.unwrap_or_else(|| {
            (
                self.lambda_hat.ln(),
                self.var_lambda / (self.lambda_hat * self.lambda_hat),
            )
        })
    }
}

fn check(results: &[StratumResult]) -> Result<f64, MetaError> {
    if results.is_empty() {
        return Err(MetaError::EmptyInput);
    }
    for r in results {
        if !(r.weight > 0.0 && r.weight.is_finite()) {
            return Err(MetaError::NonPositiveWeight {
                stratum: r.stratum.clone(),
                weight: r.weight,
            });
        }
        if !(r.lambda_hat > 0.0 && r.lambda_hat.is_finite()) {
            return Err(MetaError::NonPositiveLambda {
                stratum: r.stratum.clone(),
                lambda: r.lambda_hat,
            });
        }
        let v = r.log_pair.map_or(r.var_lambda, |(_, v)| v);
        if !(v >= 0.0) {
            return Err(MetaError::NegativeVariance {
                stratum: r.stratum.clone(),
                variance: v,
            });
        }
    }
    Ok(results.iter().map(|r| r.weight).sum())
}

fn finish(theta: f64, var_log: f64, alpha: f64) -> Result<RateRatioResult, MetaError> {
    if !(var_log > 0.0 && var_log.is_finite()) {
        return Err(MetaError::DegenerateVariance);
    }
    Ok(log_scale_result(
        1,
        0,
        theta,
        var_log,
        alpha,
        Alternative::TwoSided,
    ))
}

/// Weighted mean of stratum ratios, `Var = sum w^2 Var_s / (sum w)^2`; the
/// interval uses the log transform of the pooled estimate.
pub fn pool_natural(results: &[StratumResult], alpha: f64) -> Result<RateRatioResult, MetaError> {
    validate_alpha(alpha)?;
    let total = check(results)?;
    let lambda = results.iter().map(|r| r.weight * r.lambda_hat).sum::<f64>() / total;
    let var = results
        .iter()
        .map(|r| r.weight * r.weight * r.var_lambda)
        .sum::<f64>()
        / (total * total);
    finish(lambda.ln(), var / (lambda * lambda), alpha)
}

/// Weighted mean of log ratios with the same weights.
pub fn pool_log(results: &[StratumResult], alpha: f64) -> Result<RateRatioResult, MetaError> {
    validate_alpha(alpha)?;
    let total = check(results)?;
    let mut theta = 0.0;
    let mut var = 0.0;
    for r in results {
        let (t, v) = r.log_scale();
        theta += r.weight * t;
        var += r.weight * r.weight * v;
    }
    finish(theta / total, var / (total * total), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn weighted_mean_arithmetic() {
        let rs = [
            StratumResult::new("a", 2.0, 0.1, 100.0),
            StratumResult::new("b", 1.4, 0.2, 50.0),
        ];
        let out = pool_natural(&rs, 0.05).unwrap();
        assert_relative_eq!(out.lambda_hat, 1.8, epsilon = 1e-12);
        let var = (100.0f64.powi(2) * 0.1 + 50.0f64.powi(2) * 0.2) / 150.0f64.powi(2);
        assert_relative_eq!(out.se_log, var.sqrt() / 1.8, max_relative = 1e-12);
    }

    #[test]
    fn single_stratum_is_identity() {
        let r = StratumResult::new("only", 1.7, 0.09, 12.0);
        for out in [
            pool_natural(&[r.clone()], 0.05).unwrap(),
            pool_log(&[r], 0.05).unwrap(),
        ] {
            assert_relative_eq!(out.lambda_hat, 1.7, max_relative = 1e-14);
            assert_relative_eq!(out.se_log, 0.3 / 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn three_strata_log_oracle() {
        let rs = [
            StratumResult::from_log("a", 0.31, 0.04, 12.5),
            StratumResult::from_log("b", -0.12, 0.09, 40.0),
            StratumResult::from_log("c", 0.58, 0.02, 7.25),
        ];
        let w: f64 = 12.5 + 40.0 + 7.25;
        let theta = (12.5 * 0.31 + 40.0 * -0.12 + 7.25 * 0.58) / w;
        let var = (12.5f64.powi(2) * 0.04 + 1600.0 * 0.09 + 7.25f64.powi(2) * 0.02) / (w * w);
        let out = pool_log(&rs, 0.05).unwrap();
        assert_relative_eq!(out.log_lambda(), theta, epsilon = 1e-12);
        assert_relative_eq!(out.se_log, var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(pool_natural(&[], 0.05), Err(MetaError::EmptyInput));
        assert!(matches!(
            pool_log(&[StratumResult::new("z", 0.0, 0.1, 1.0)], 0.05),
            Err(MetaError::NonPositiveLambda { .. })
        ));
        assert!(matches!(
            pool_natural(&[StratumResult::new("z", 1.0, 0.1, 0.0)], 0.05),
            Err(MetaError::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            pool_natural(&[StratumResult::new("z", 1.0, -0.1, 1.0)], 0.05),
            Err(MetaError::NegativeVariance { .. })
        ));
    }

    #[test]
    fn scales_agree_when_ratios_are_close() {
        let rs = [
            StratumResult::new("a", 1.500, 0.05, 30.0),
            StratumResult::new("b", 1.510, 0.07, 20.0),
            StratumResult::new("c", 1.495, 0.04, 45.0),
        ];
        let nat = pool_natural(&rs, 0.05).unwrap();
        let log = pool_log(&rs, 0.05).unwrap();
        assert!((nat.lambda_hat - log.lambda_hat).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn common_ratio_and_weight_scaling(
            lambda in 0.1f64..10.0,
            scale in 0.01f64..100.0,
            strata in prop::collection::vec((0.1f64..500.0, 0.001f64..1.0), 1..6),
        ) {
            let rs: Vec<StratumResult> = strata
                .iter()
                .enumerate()
                .map(|(i, &(w, v))| StratumResult::new(format!("s{i}"), lambda, v, w))
                .collect();
            let scaled: Vec<StratumResult> = rs
                .iter()
                .cloned()
                .map(|mut r| { r.weight *= scale; r })
                .collect();
            for pool in [pool_natural, pool_log] {
                let a = pool(&rs, 0.05).unwrap();
                let b = pool(&scaled, 0.05).unwrap();
                prop_assert!((a.lambda_hat - lambda).abs() < 1e-10 * lambda);
                prop_assert!((a.lambda_hat - b.lambda_hat).abs() < 1e-10 * lambda);
                prop_assert!((a.se_log - b.se_log).abs() < 1e-10 * a.se_log);
            }
        }
    }
}
