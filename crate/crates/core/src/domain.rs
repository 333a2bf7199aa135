//! Subject-level records, validated datasets and the estimate types shared by
//! every estimator in the crate.
//!
//! A [`Dataset`] is immutable once built. Records are held in a canonical order
//! (arm, then subject id) so that every downstream result is independent of the
//! order in which subjects were supplied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while validating subject-level data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("no records supplied")]
    Empty,
    #[error("subject {subject_id}: negative event count")]
    NegativeCount { subject_id: String },
    #[error("subject {subject_id}: exposure must be positive and finite, got {exposure}")]
    NonPositiveExposure { subject_id: String, exposure: f64 },
    #[error("subject {subject_id}: expected {expected} covariates, found {found}")]
    RaggedCovariates {
        subject_id: String,
        expected: usize,
        found: usize,
    },
    #[error("subject {subject_id}: covariate {column} is missing or not finite")]
    MissingCovariate { subject_id: String, column: usize },
    #[error("arm {arm} has {n} subject(s); at least 2 are required")]
    ArmTooSmall { arm: usize, n: usize },
    #[error("subject {subject_id}: arm index {arm} outside 0..{arm_count}")]
    UnknownArmIndex {
        subject_id: String,
        arm: usize,
        arm_count: usize,
    },
    #[error("covariate name list has {names} entries but records carry {found} covariates")]
    CovariateNames { names: usize, found: usize },
}

/// One subject: event count over a follow-up period, plus baseline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Arm index; 0 is the control arm.
    pub arm: usize,
    pub count: u64,
    /// Follow-up duration in whatever time unit the caller uses consistently.
    pub exposure: f64,
    pub covariates: Vec<f64>,
    pub stratum: Option<String>,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, arm: usize, count: u64, exposure: f64) -> Self {
        Self {
            subject_id: subject_id.into(),
            arm,
            count,
            exposure,
            covariates: Vec::new(),
            stratum: None,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_stratum(mut self, stratum: impl Into<String>) -> Self {
        self.stratum = Some(stratum.into());
        self
    }
}

/// Per-arm totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmAggregate {
    pub n: usize,
    pub events: u64,
    pub exposure: f64,
}

impl ArmAggregate {
    pub fn mean_exposure(&self) -> f64 {
        self.exposure / self.n as f64
    }

    /// Events per unit exposure.
    pub fn rate(&self) -> f64 {
        self.events as f64 / self.exposure
    }
}

/// A validated collection of subject records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    arm_count: usize,
    covariate_names: Vec<String>,
    aggregates: Vec<ArmAggregate>,
}

impl Dataset {
    /// Validates `records` against `arm_count` arms (indices `0..arm_count`).
    ///
    /// Covariate names may be empty, in which case columns are named `x0, x1, ...`.
    pub fn new(
        mut records: Vec<SubjectRecord>,
        arm_count: usize,
        covariate_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let first = records.first().ok_or(DataError::Empty)?;
        let p = first.covariates.len();
        let covariate_names = if covariate_names.is_empty() {
            (0..p).map(|j| format!("x{j}")).collect()
        } else if covariate_names.len() != p {
            return Err(DataError::CovariateNames {
                names: covariate_names.len(),
                found: p,
            });
        } else {
            covariate_names
        };

        for r in &records {
            if !(r.exposure.is_finite() && r.exposure > 0.0) {
                return Err(DataError::NonPositiveExposure {
                    subject_id: r.subject_id.clone(),
                    exposure: r.exposure,
                });
            }
            if r.arm >= arm_count {
                return Err(DataError::UnknownArmIndex {
                    subject_id: r.subject_id.clone(),
                    arm: r.arm,
                    arm_count,
                });
            }
            if r.covariates.len() != p {
                return Err(DataError::RaggedCovariates {
                    subject_id: r.subject_id.clone(),
                    expected: p,
                    found: r.covariates.len(),
                });
            }
            if let Some(column) = r.covariates.iter().position(|x| !x.is_finite()) {
                return Err(DataError::MissingCovariate {
                    subject_id: r.subject_id.clone(),
                    column,
                });
            }
        }

        records.sort_by(|a, b| {
            a.arm
                .cmp(&b.arm)
                .then_with(|| a.subject_id.cmp(&b.subject_id))
        });
        let aggregates = compute_aggregates(&records, arm_count);
        if let Some((arm, agg)) = aggregates.iter().enumerate().find(|(_, a)| a.n < 2) {
            return Err(DataError::ArmTooSmall { arm, n: agg.n });
        }

        Ok(Self {
            records,
            arm_count,
            covariate_names,
            aggregates,
        })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SubjectRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arm_count(&self) -> usize {
        self.arm_count
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_count(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn aggregates(&self) -> &[ArmAggregate] {
        &self.aggregates
    }

    pub fn aggregate(&self, arm: usize) -> &ArmAggregate {
        &self.aggregates[arm]
    }

    pub fn total_exposure(&self) -> f64 {
        self.records.iter().map(|r| r.exposure).sum()
    }

    /// True when every record carries a stratum label.
    pub fn has_strata(&self) -> bool {
        self.records.iter().all(|r| r.stratum.is_some())
    }

    /// Column indices of covariates named in `names`.
    pub fn covariate_indices(&self, names: &[&str]) -> Option<Vec<usize>> {
        names
            .iter()
            .map(|n| self.covariate_names.iter().position(|c| c == n))
            .collect()
    }

    /// Returns a copy restricted to the covariate columns in `columns`.
    pub fn select_covariates(&self, columns: &[usize]) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| SubjectRecord {
                covariates: columns.iter().map(|&c| r.covariates[c]).collect(),
                ..r.clone()
            })
            .collect();
        Dataset {
            records,
            arm_count: self.arm_count,
            covariate_names: columns
                .iter()
                .map(|&c| self.covariate_names[c].clone())
                .collect(),
            aggregates: self.aggregates.clone(),
        }
    }
}

fn compute_aggregates(records: &[SubjectRecord], arm_count: usize) -> Vec<ArmAggregate> {
    let mut out = vec![
        ArmAggregate {
            n: 0,
            events: 0,
            exposure: 0.0,
        };
        arm_count
    ];
    for r in records {
        let a = &mut out[r.arm];
        a.n += 1;
        a.events += r.count;
        a.exposure += r.exposure;
    }
    out
}

/// Validates records, inferring the number of arms from the largest arm index.
pub fn validate_dataset(records: Vec<SubjectRecord>) -> Result<Dataset, DataError> {
    let arm_count = records
        .iter()
        .map(|r| r.arm + 1)
        .max()
        .ok_or(DataError::Empty)?;
    Dataset::new(records, arm_count, Vec::new())
}

/// Which estimator produced a [`RateEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Aggregated,
    Ancova,
    Anhecova,
    NbGcomp,
    NbAipw,
}

/// Arm-level event rates with their joint covariance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub rates: Vec<f64>,
    /// Row-major `(I+1) x (I+1)` covariance of `rates`.
    pub cov: Vec<Vec<f64>>,
    pub method_tag: MethodTag,
    /// Arms with no observed events (rate exactly zero).
    pub zero_event_arms: Vec<usize>,
}

impl RateEstimate {
    pub fn arm_count(&self) -> usize {
        self.rates.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.rates.len())
            .map(|i| self.cov[i][i].max(0.0).sqrt())
            .collect()
    }
}

/// Log-scale counterpart of a [`RateEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRateEstimate {
    pub theta: Vec<f64>,
    pub cov_theta: Vec<Vec<f64>>,
}

/// Hypothesis alternative for the rate-ratio z-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// H1: the numerator rate is lower.
    Less,
    /// H1: the numerator rate is higher.
    Greater,
}

/// Rate ratio `r_i / r_k` with its confidence interval and test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRatioResult {
    pub numerator_arm: usize,
    pub denominator_arm: usize,
    pub lambda_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard error of the log rate ratio.
    pub se_log: f64,
    pub z: f64,
    pub p: f64,
    pub alpha: f64,
    pub alternative: Alternative,
}

impl RateRatioResult {
    pub fn log_lambda(&self) -> f64 {
        self.lambda_hat.ln()
    }

    pub fn rejects(&self) -> bool {
        self.p < self.alpha
    }

    pub fn covers(&self, lambda: f64) -> bool {
        self.ci_low <= lambda && lambda <= self.ci_high
    }
}
