use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::NbDesign;
use super::likelihood::{nb_loglik, nb_logpmf_dk, nb_logpmf_dk2, nb_score};
use super::NbError;
use crate::domain::Dataset;
use crate::stats::symmetrize;

/// Linear predictors further than this (in log-rate units) from the pooled
/// log rate are treated as a diverging fit.
const DIVERGENCE_BOUND: f64 = 30.0;
const MAX_DISPERSION: f64 = 1e8;

/// Which covariance the Pearson factor multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PearsonTarget {
    #[default]
    Sandwich,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbOptions {
    /// Holds `k` at this value instead of estimating it (0 gives a Poisson GLM).
    pub fixed_dispersion: Option<f64>,
    pub max_iter: usize,
    pub pearson_target: PearsonTarget,
}

impl Default for NbOptions {
    fn default() -> Self {
        Self {
            fixed_dispersion: None,
            max_iter: 200,
            pearson_target: PearsonTarget::Sandwich,
        }
    }
}

/// A fitted NB2 regression.
#[derive(Debug, Clone)]
pub struct NbFit {
    pub beta: Vec<f64>,
    pub k: f64,
    pub model_cov: DMatrix<f64>,
    pub sandwich_cov: DMatrix<f64>,
    pub pearson_scaled_cov: DMatrix<f64>,
    /// Pearson chi-square over residual degrees of freedom.
    pub phi: f64,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    /// Log-likelihood after every accepted outer iteration, starting values first.
    pub loglik_path: Vec<f64>,
    pub score: Vec<f64>,
    pub design: NbDesign,
}

impl NbFit {
    pub fn column_names(&self) -> &[String] {
        &self.design.column_names
    }

    /// Per-subject `ln(exposure)`.
    pub fn offset(&self) -> &[f64] {
        &self.design.offset
    }

    pub fn fitted_means(&self) -> Vec<f64> {
        self.design.means(&self.beta)
    }
}

/// Diagnostics attached to a fit that did not converge.
#[derive(Debug, Clone)]
pub struct NonConvergence {
    pub reason: String,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub condition_number: f64,
    /// Sum of parameter step lengths over all outer iterations.
    pub path_length: f64,
    /// Best iterate reached; its covariances may be non-finite.
    pub best: NbFit,
}

/// Fits the NB2 model with arm indicators and, when `adjusted`, the selected
/// covariates (all covariates if `covariates` is empty).
pub fn fit_nb(data: &Dataset, covariates: &[usize], adjusted: bool) -> Result<NbFit, NbError> {
    fit_nb_with(data, covariates, adjusted, &NbOptions::default())
}

pub fn fit_nb_with(
    data: &Dataset,
    covariates: &[usize],
    adjusted: bool,
    opts: &NbOptions,
) -> Result<NbFit, NbError> {
    let selected: Vec<usize> = if !adjusted {
        Vec::new()
    } else if data.covariate_count() == 0 {
        return Err(NbError::NoCovariates);
    } else if covariates.is_empty() {
        (0..data.covariate_count()).collect()
    } else {
        if let Some(&c) = covariates.iter().find(|&&c| c >= data.covariate_count()) {
            return Err(NbError::CovariateOutOfRange { column: c });
        }
        covariates.to_vec()
    };
    fit_design(NbDesign::new(data, &selected), opts)
}

enum Diverged {
    Coefficients,
    Dispersion,
}

impl Diverged {
    fn describe(&self) -> &'static str {
        match self {
            Diverged::Coefficients => "linear predictor diverging (MLE at infinity)",
            Diverged::Dispersion => "dispersion diverging",
        }
    }
}

fn pooled_log_rate(design: &NbDesign) -> Option<f64> {
    let events: u64 = design.y.iter().sum();
    if events == 0 {
        return None;
    }
    Some((events as f64 / design.exposure.iter().sum::<f64>()).ln())
}

fn diverging(design: &NbDesign, beta: &[f64], reference: f64) -> bool {
    design
        .linear(beta)
        .iter()
        .any(|eta| !eta.is_finite() || (eta - reference).abs() > DIVERGENCE_BOUND)
}

/// Fisher scoring for `beta` at fixed `k`, with step halving so the
/// likelihood never decreases.
/// On divergence the last iterate is returned with the error.
fn irls(
    design: &NbDesign,
    beta0: &[f64],
    k: f64,
    reference: f64,
) -> Result<Vec<f64>, (Diverged, Vec<f64>)> {
    let p = design.p();
    let mut beta = beta0.to_vec();
    let mut ll = nb_loglik(&beta, k, design);
    for _ in 0..100 {
        let mu = design.means(&beta);
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        for (j, (&y, &m)) in design.y.iter().zip(&mu).enumerate() {
            let denom = 1.0 + k * m;
            let w = m / denom;
            let r = (y as f64 - m) / denom;
            let row = design.x.row(j);
            for a in 0..p {
                let xa = row[a];
                if xa == 0.0 {
                    continue;
                }
                score[a] += xa * r;
                for b in a..p {
                    info[(a, b)] += xa * w * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        let Some(chol) = info.cholesky() else {
            return Err((Diverged::Coefficients, beta));
        };
        let delta = chol.solve(&score);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(delta.iter())
                .map(|(b, d)| b + step * d)
                .collect();
            let ll_c = nb_loglik(&cand, k, design);
            if ll_c.is_finite() && ll_c >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, ll_c));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, ll_c)) = accepted else {
            // no ascent direction left at this precision
            return Ok(beta);
        };
        let max_step = delta.iter().map(|d| (step * d).abs()).fold(0.0, f64::max);
        let gain = ll_c - ll;
        beta = cand;
        ll = ll_c;
        if diverging(design, &beta, reference) {
            return Err((Diverged::Coefficients, beta));
        }
        if gain.abs() < 1e-13 * ll.abs().max(1.0) && max_step < 1e-10 {
            break;
        }
    }
    Ok(beta)
}

/// Profile maximization of the likelihood in `k` at fixed `beta`.
fn update_dispersion(design: &NbDesign, beta: &[f64], k0: f64) -> Result<f64, Diverged> {
    let mu = design.means(beta);
    let score = |k: f64| -> f64 {
        design
            .y
            .iter()
            .zip(&mu)
            .map(|(&y, &m)| nb_logpmf_dk(y, m, k))
            .sum()
    };
    let curvature = |k: f64| -> f64 {
        design
            .y
            .iter()
            .zip(&mu)
            .map(|(&y, &m)| nb_logpmf_dk2(y, m, k))
            .sum()
    };

    if score(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = (2.0 * k0).max(1e-3);
    while score(hi) > 0.0 {
        lo = hi;
        hi *= 4.0;
        if hi > MAX_DISPERSION {
            return Err(Diverged::Dispersion);
        }
    }
    let mut k = if k0 > lo && k0 < hi {
        k0
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let s = score(k);
        if s > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let d2 = curvature(k);
        let newton = k - s / d2;
        let next = if d2 < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - k).abs() <= 1e-14 * (1.0 + k) || hi - lo <= 1e-15 * (1.0 + hi) {
            return Ok(next);
        }
        k = next;
    }
    Ok(k)
}

fn starting_values(design: &NbDesign) -> Vec<f64> {
    let mut beta = vec![0.0; design.p()];
    let mut events = vec![0u64; design.arms];
    let mut exposure = vec![0.0; design.arms];
    for j in 0..design.n() {
        events[design.arm_of[j]] += design.y[j];
        exposure[design.arm_of[j]] += design.exposure[j];
    }
    for a in 0..design.arms {
        beta[a] = ((events[a] as f64).max(0.5) / exposure[a]).ln();
    }
    beta
}

fn moment_dispersion(design: &NbDesign, beta: &[f64]) -> f64 {
    let mu = design.means(beta);
    let (mut num, mut den) = (0.0, 0.0);
    for (&y, &m) in design.y.iter().zip(&mu) {
        let r = y as f64 - m;
        num += r * r - y as f64;
        den += m * m;
    }
    (num / den).max(1e-3)
}

struct Covariances {
    model: DMatrix<f64>,
    sandwich: DMatrix<f64>,
    pearson: DMatrix<f64>,
    phi: f64,
    condition: f64,
}

fn covariances(
    design: &NbDesign,
    beta: &[f64],
    k: f64,
    target: PearsonTarget,
) -> Option<Covariances> {
    let p = design.p();
    let n = design.n();
    let mu = design.means(beta);
    let mut a_mat = DMatrix::<f64>::zeros(p, p);
    let mut b_mat = DMatrix::<f64>::zeros(p, p);
    let mut chi2 = 0.0;
    for (j, (&y, &m)) in design.y.iter().zip(&mu).enumerate() {
        let yf = y as f64;
        let denom = 1.0 + k * m;
        let obs_w = m * (1.0 + k * yf) / (denom * denom);
        let s = (yf - m) / denom;
        let row = design.x.row(j);
        for a in 0..p {
            for b in a..p {
                let xx = row[a] * row[b];
                a_mat[(a, b)] += obs_w * xx;
                b_mat[(a, b)] += s * s * xx;
            }
        }
        chi2 += (yf - m) * (yf - m) / (m + k * m * m);
    }
    for a in 0..p {
        for b in 0..a {
            a_mat[(a, b)] = a_mat[(b, a)];
            b_mat[(a, b)] = b_mat[(b, a)];
        }
    }
    let eig = a_mat.clone().symmetric_eigenvalues();
    let condition = eig.max() / eig.min();
    let mut model = a_mat.cholesky()?.inverse();
    symmetrize(&mut model);
    let mut sandwich = &model * b_mat * &model;
    symmetrize(&mut sandwich);
    let phi = if n > p {
        chi2 / (n - p) as f64
    } else {
        f64::NAN
    };
    let pearson = match target {
        PearsonTarget::Sandwich => &sandwich * phi,
        PearsonTarget::Model => &model * phi,
    };
    Some(Covariances {
        model,
        sandwich,
        pearson,
        phi,
        condition,
    })
}

/// Fits the model defined by an already-built design.
pub fn fit_design(design: NbDesign, opts: &NbOptions) -> Result<NbFit, NbError> {
    let p = design.p();
    let mut beta = starting_values(&design);
    let mut k = opts
        .fixed_dispersion
        .unwrap_or_else(|| moment_dispersion(&design, &beta));
    let mut loglik = nb_loglik(&beta, k, &design);
    let mut loglik_path = vec![loglik];
    let mut path_length = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut failure: Option<&'static str> = None;

    match pooled_log_rate(&design) {
        None => failure = Some("no events observed; rates are at the boundary"),
        Some(reference) => {
            while iterations < opts.max_iter {
                iterations += 1;
                let new_beta = match irls(&design, &beta, k, reference) {
                    Ok(b) => b,
                    Err((d, last)) => {
                        path_length += step_length(&last, &beta);
                        beta = last;
                        loglik = nb_loglik(&beta, k, &design);
                        loglik_path.push(loglik);
                        failure = Some(d.describe());
                        break;
                    }
                };
                let new_k = match opts.fixed_dispersion {
                    Some(fixed) => fixed,
                    None => match update_dispersion(&design, &new_beta, k) {
                        Ok(v) => v,
                        Err(d) => {
                            failure = Some(d.describe());
                            break;
                        }
                    },
                };
                path_length += step_length(&new_beta, &beta) + (new_k - k).abs();
                beta = new_beta;
                k = new_k;
                let ll = nb_loglik(&beta, k, &design);
                let change = (ll - loglik).abs();
                loglik = ll;
                loglik_path.push(ll);
                let grad = kkt_gradient(&design, &beta, k, opts);
                let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                if change < 1e-10 * ll.abs().max(1.0) && gnorm < 1e-6 {
                    converged = true;
                    break;
                }
            }
        }
    }

    let score = nb_score(&beta, k, &design);
    let grad = kkt_gradient(&design, &beta, k, opts);
    let gradient_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let covs = covariances(&design, &beta, k, opts.pearson_target);
    let nan = || DMatrix::from_element(p, p, f64::NAN);
    let condition_number = covs.as_ref().map_or(f64::INFINITY, |c| c.condition);

    let make_fit = |covs: Option<Covariances>, design: NbDesign| {
        let (model_cov, sandwich_cov, pearson_scaled_cov, phi) = match covs {
            Some(c) => (c.model, c.sandwich, c.pearson, c.phi),
            None => (nan(), nan(), nan(), f64::NAN),
        };
        NbFit {
            beta: beta.clone(),
            k,
            model_cov,
            sandwich_cov,
            pearson_scaled_cov,
            phi,
            converged,
            iterations,
            loglik,
            loglik_path: loglik_path.clone(),
            score: score.clone(),
            design,
        }
    };

    if !converged {
        let reason = failure.unwrap_or("iteration limit reached").to_string();
        return Err(NbError::NonConvergence(Box::new(NonConvergence {
            reason,
            iterations,
            gradient_norm,
            condition_number,
            path_length,
            best: make_fit(covs, design),
        })));
    }
    let Some(covs) = covs else {
        return Err(NbError::SingularInformation);
    };
    let fit = make_fit(Some(covs), design);
    if opts.fixed_dispersion.is_none() && k == 0.0 {
        return Err(NbError::BoundaryDispersion(Box::new(fit)));
    }
    Ok(fit)
}

fn step_length(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Score with the dispersion component dropped when `k` is fixed or sits at
/// its lower bound with a non-positive derivative.
fn kkt_gradient(design: &NbDesign, beta: &[f64], k: f64, opts: &NbOptions) -> Vec<f64> {
    let mut g = nb_score(beta, k, design);
    let last = g.len() - 1;
    if opts.fixed_dispersion.is_some() || (k == 0.0 && g[last] <= 0.0) {
        g[last] = 0.0;
    }
    g
}

/// Pearson-scaled robust covariance of `beta`.
pub fn robust_covariance(fit: &NbFit) -> Result<DMatrix<f64>, NbError> {
    if fit.pearson_scaled_cov.iter().all(|v| v.is_finite()) {
        Ok(fit.pearson_scaled_cov.clone())
    } else {
        Err(NbError::SingularInformation)
    }
}
