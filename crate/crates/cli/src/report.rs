//! The analysis report: per-arm rates and per-comparison rate ratios for each
//! period, from the empirical and NB methods.

use std::fmt::Write as _;

use serde::Serialize;

use countrate::empirical::{estimate_rates, log_rates, rate_ratio};
use countrate::nbglm::{
    fit_nb, marginal_rates_aipw, marginal_rates_gcomp, nb_rate_ratio_from_fit, NbError, NbFit,
};
use countrate::{Adjustment, Alternative, Dataset, HcFlavor, InferenceConfig, RateRatioResult};

use crate::input::LoadedData;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Empirical,
    Nb,
    Both,
}

impl MethodChoice {
    fn empirical(self) -> bool {
        matches!(self, MethodChoice::Empirical | MethodChoice::Both)
    }

    fn nb(self) -> bool {
        matches!(self, MethodChoice::Nb | MethodChoice::Both)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeOptions {
    pub method: MethodChoice,
    pub adjust: Vec<String>,
    pub strata: Option<String>,
    pub alpha: f64,
    pub hc: Option<HcFlavor>,
    pub alternative: Alternative,
    pub exposure_divisor: f64,
    pub control: Option<String>,
    pub period: Option<String>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            method: MethodChoice::Both,
            adjust: Vec::new(),
            strata: None,
            alpha: 0.05,
            hc: None,
            alternative: Alternative::TwoSided,
            exposure_divisor: 1.0,
            control: None,
            period: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub arm: String,
    pub n: usize,
    pub events: u64,
    pub exposure: f64,
    pub observed_rate: f64,
    pub empirical_rate: Option<f64>,
    pub empirical_se: Option<f64>,
    pub nb_gcomp_rate: Option<f64>,
    pub nb_aipw_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub lambda_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se_log: f64,
    pub z: f64,
    pub p: f64,
}

impl From<&RateRatioResult> for RatioReport {
    fn from(r: &RateRatioResult) -> Self {
        Self {
            lambda_hat: r.lambda_hat,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            se_log: r.se_log,
            z: r.z,
            p: r.p,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub numerator: String,
    pub denominator: String,
    pub raw_rr: f64,
    pub empirical: Option<RatioReport>,
    pub nb: Option<RatioReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodIssue {
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct NbDiagnostics {
    pub dispersion: f64,
    pub pearson_phi: f64,
    pub iterations: usize,
    pub boundary_dispersion: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodReport {
    pub period: Option<String>,
    pub empirical_method: Option<String>,
    pub arms: Vec<ArmReport>,
    pub comparisons: Vec<ComparisonReport>,
    pub nb: Option<NbDiagnostics>,
    pub issues: Vec<MethodIssue>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub config: AnalyzeOptions,
    pub periods: Vec<PeriodReport>,
}

fn adjustment(opts: &AnalyzeOptions) -> Adjustment {
    if opts.strata.is_some() {
        Adjustment::Anhecova
    } else if !opts.adjust.is_empty() {
        Adjustment::Ancova
    } else {
        Adjustment::None
    }
}

fn analyze_period(
    period: Option<String>,
    data: &Dataset,
    labels: &[String],
    opts: &AnalyzeOptions,
) -> PeriodReport {
    let arms = data.arm_count();
    let mut issues = Vec::new();
    let mut arm_reports: Vec<ArmReport> = data
        .aggregates()
        .iter()
        .enumerate()
        .map(|(a, agg)| ArmReport {
            arm: labels[a].clone(),
            n: agg.n,
            events: agg.events,
            exposure: agg.exposure,
            observed_rate: agg.rate(),
            empirical_rate: None,
            empirical_se: None,
            nb_gcomp_rate: None,
            nb_aipw_rate: None,
        })
        .collect();
    let mut comparisons: Vec<ComparisonReport> = (1..arms)
        .map(|i| ComparisonReport {
            numerator: labels[i].clone(),
            denominator: labels[0].clone(),
            raw_rr: arm_reports[i].observed_rate / arm_reports[0].observed_rate,
            empirical: None,
            nb: None,
        })
        .collect();

    let mut empirical_method = None;
    if opts.method.empirical() {
        let cfg = InferenceConfig {
            alpha: opts.alpha,
            adjustment: adjustment(opts),
            hc_flavor: opts.hc,
            alternative: opts.alternative,
            strata_in_design: true,
        };
        match estimate_rates(data, &cfg) {
            Ok(est) => {
                empirical_method = Some(format!("{:?}", est.method_tag).to_lowercase());
                let se = est.std_errors();
                for (a, r) in arm_reports.iter_mut().enumerate() {
                    r.empirical_rate = Some(est.rates[a]);
                    r.empirical_se = Some(se[a]);
                }
                match log_rates(&est) {
                    Ok(logs) => {
                        for (c, cmp) in comparisons.iter_mut().enumerate() {
                            match rate_ratio(&logs, c + 1, 0, opts.alpha, opts.alternative) {
                                Ok(rr) => cmp.empirical = Some(RatioReport::from(&rr)),
                                Err(e) => issues.push(MethodIssue {
                                    method: "empirical".into(),
                                    message: format!(
                                        "{} vs {}: {e}",
                                        cmp.numerator, cmp.denominator
                                    ),
                                }),
                            }
                        }
                    }
                    Err(e) => issues.push(MethodIssue {
                        method: "empirical".into(),
                        message: e.to_string(),
                    }),
                }
            }
            Err(e) => issues.push(MethodIssue {
                method: "empirical".into(),
                message: e.to_string(),
            }),
        }
    }

    let mut nb_diag = None;
    if opts.method.nb() {
        let fit: Result<(NbFit, bool), NbError> = match fit_nb(data, &[], !opts.adjust.is_empty()) {
            Ok(f) => Ok((f, false)),
            Err(NbError::BoundaryDispersion(f)) => Ok((*f, true)),
            Err(e) => Err(e),
        };
        match fit {
            Ok((fit, boundary)) => {
                nb_diag = Some(NbDiagnostics {
                    dispersion: fit.k,
                    pearson_phi: fit.phi,
                    iterations: fit.iterations,
                    boundary_dispersion: boundary,
                });
                if boundary {
                    issues.push(MethodIssue {
                        method: "nb".into(),
                        message: "dispersion estimate is 0; Poisson fit reported".into(),
                    });
                }
                let g = marginal_rates_gcomp(&fit);
                for (a, r) in arm_reports.iter_mut().enumerate() {
                    r.nb_gcomp_rate = Some(g.rates[a]);
                }
                match marginal_rates_aipw(&fit) {
                    Ok(m) => {
                        for (a, r) in arm_reports.iter_mut().enumerate() {
                            r.nb_aipw_rate = Some(m.rates[a]);
                        }
                    }
                    Err(e) => issues.push(MethodIssue {
                        method: "nb_aipw".into(),
                        message: e.to_string(),
                    }),
                }
                for (c, cmp) in comparisons.iter_mut().enumerate() {
                    match nb_rate_ratio_from_fit(&fit, c + 1, 0, opts.alpha, opts.alternative) {
                        Ok(rr) => cmp.nb = Some(RatioReport::from(&rr)),
                        Err(e) => issues.push(MethodIssue {
                            method: "nb".into(),
                            message: format!("{} vs {}: {e}", cmp.numerator, cmp.denominator),
                        }),
                    }
                }
            }
            Err(e) => issues.push(MethodIssue {
                method: "nb".into(),
                message: e.to_string(),
            }),
        }
    }

    PeriodReport {
        period,
        empirical_method,
        arms: arm_reports,
        comparisons,
        nb: nb_diag,
        issues,
    }
}

/// Runs the selected methods on every period of `loaded`.
pub fn build_report(loaded: &LoadedData, opts: &AnalyzeOptions) -> AnalysisReport {
    AnalysisReport {
        schema_version: SCHEMA_VERSION,
        config: opts.clone(),
        periods: loaded
            .periods
            .iter()
            .map(|(p, d)| analyze_period(p.clone(), d, &loaded.arm_labels, opts))
            .collect(),
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn ratio(r: &Option<RatioReport>) -> String {
    r.as_ref().map_or_else(
        || "-".to_string(),
        |r| format!("{:.2} ({:.2}, {:.2})", r.lambda_hat, r.ci_low, r.ci_high),
    )
}

fn push_table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}

/// Aligned plain-text rendering of a report.
pub fn render_table(report: &AnalysisReport) -> String {
    let mut out = String::new();
    for p in &report.periods {
        if let Some(label) = &p.period {
            let _ = writeln!(out, "Period: {label}");
        }
        let mut rows = vec![vec![
            "Arm".to_string(),
            "N".into(),
            "Events".into(),
            "Exposure".into(),
            "Obs rate".into(),
            "Emp rate".into(),
            "NB rate".into(),
            "AIPW rate".into(),
        ]];
        for a in &p.arms {
            rows.push(vec![
                a.arm.clone(),
                a.n.to_string(),
                a.events.to_string(),
                format!("{:.1}", a.exposure),
                format!("{:.3}", a.observed_rate),
                opt(a.empirical_rate, 3),
                opt(a.nb_gcomp_rate, 3),
                opt(a.nb_aipw_rate, 3),
            ]);
        }
        push_table(&mut out, &rows);
        let _ = writeln!(out);
        let mut rows = vec![vec![
            "Comparison".to_string(),
            "Raw RR".into(),
            "Empirical RR (CI)".into(),
            "p".into(),
            "NB RR (CI)".into(),
            "p".into(),
        ]];
        for c in &p.comparisons {
            rows.push(vec![
                format!("{} vs {}", c.numerator, c.denominator),
                format!("{:.2}", c.raw_rr),
                ratio(&c.empirical),
                opt(c.empirical.as_ref().map(|r| r.p), 4),
                ratio(&c.nb),
                opt(c.nb.as_ref().map(|r| r.p), 4),
            ]);
        }
        push_table(&mut out, &rows);
        for issue in &p.issues {
            let _ = writeln!(out, "note [{}]: {}", issue.method, issue.message);
        }
        let _ = writeln!(out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use countrate::SubjectRecord;

    fn loaded() -> LoadedData {
        let mut recs = Vec::new();
        for j in 0..30u64 {
            let arm = (j % 3) as usize;
            recs.push(
                SubjectRecord::new(
                    format!("{j}"),
                    arm,
                    (j * 5 + arm as u64) % 4,
                    0.5 + (j % 4) as f64 / 4.0,
                )
                .with_covariates(vec![(j % 6) as f64]),
            );
        }
        LoadedData {
            arm_labels: vec!["pbo".into(), "low".into(), "high".into()],
            periods: vec![(None, Dataset::new(recs, 3, vec!["x".into()]).unwrap())],
        }
    }

    #[test]
    fn every_arm_is_compared_with_control() {
        let report = build_report(&loaded(), &AnalyzeOptions::default());
        let p = &report.periods[0];
        assert_eq!(report.schema_version, SCHEMA_VERSION);
        assert_eq!(p.arms.len(), 3);
        let pairs: Vec<_> = p
            .comparisons
            .iter()
            .map(|c| (c.numerator.as_str(), c.denominator.as_str()))
            .collect();
        assert_eq!(pairs, [("low", "pbo"), ("high", "pbo")]);
        for c in &p.comparisons {
            let e = c.empirical.as_ref().unwrap();
            assert!((e.lambda_hat - c.raw_rr).abs() < 1e-12);
            assert!(c.nb.is_some());
        }
        for a in &p.arms {
            assert!((a.observed_rate - a.events as f64 / a.exposure).abs() < 1e-12);
        }
        let table = render_table(&report);
        assert!(table.contains("high vs pbo"));
        assert_eq!(
            table.lines().next().unwrap().split_whitespace().next(),
            Some("Arm")
        );
    }

    #[test]
    fn method_failure_does_not_stop_the_other() {
        let mut recs = Vec::new();
        for j in 0..10u64 {
            let arm = (j % 2) as usize;
            recs.push(SubjectRecord::new(
                format!("{j}"),
                arm,
                if arm == 0 { 0 } else { j % 3 + 1 },
                1.0,
            ));
        }
        let data = LoadedData {
            arm_labels: vec!["a".into(), "b".into()],
            periods: vec![(None, Dataset::new(recs, 2, vec![]).unwrap())],
        };
        let p = &build_report(&data, &AnalyzeOptions::default()).periods[0];
        assert!(p.comparisons[0].empirical.is_none());
        assert!(!p.issues.is_empty());
        assert!((p.arms[1].empirical_rate.unwrap() - p.arms[1].observed_rate).abs() < 1e-12);
    }
}
