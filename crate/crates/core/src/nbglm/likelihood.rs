//! NB2 log-likelihood and its derivatives.
//!
//! Parameterized by mean `mu` and dispersion `k >= 0` with variance
//! `mu + k mu^2`. All functions are continuous at `k = 0`, where they reduce to
//! the Poisson case. The gamma-function ratio is written as the finite product
//! `Gamma(y + 1/k) / Gamma(1/k) = k^-y prod_{m<y} (1 + k m)`, which is exact for
//! integer counts and stays well conditioned as `k -> 0`.

use statrs::function::gamma::ln_gamma;

use super::design::NbDesign;

const SERIES_CUTOFF: f64 = 1e-3;

/// `(ln(1+t) - t/(1+t)) / t^2`
fn f_over_t2(t: f64) -> f64 {
    if t.abs() < SERIES_CUTOFF {
        // sum_{m>=2} (-1)^m (m-1)/m t^(m-2)
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 2..=10 {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * (m as f64 - 1.0) / m as f64 * pow;
            pow *= t;
        }
        acc
    } else {
        (t.ln_1p() - t / (1.0 + t)) / (t * t)
    }
}

/// `(t^2/(1+t)^2 - 2 (ln(1+t) - t/(1+t))) / t^3`
fn g_over_t3(t: f64) -> f64 {
    if t.abs() < SERIES_CUTOFF {
        // sum_{m>=3} (-1)^m (m-1)(m-2)/m t^(m-3)
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 3..=11 {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let mf = m as f64;
            acc += sign * (mf - 1.0) * (mf - 2.0) / mf * pow;
            pow *= t;
        }
        acc
    } else {
        let a = t / (1.0 + t);
        (a * a - 2.0 * (t.ln_1p() - a)) / (t * t * t)
    }
}

/// `ln(1 + t) / t`, equal to 1 at `t = 0`.
fn ln1p_over_t(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0 - t / 2.0
    } else {
        t.ln_1p() / t
    }
}

/// Log probability mass of `y` under NB2(`mu`, `k`).
pub fn nb_logpmf(y: u64, mu: f64, k: f64) -> f64 {
    let yf = y as f64;
    let mut rising = 0.0;
    for m in 0..y {
        rising += (k * m as f64).ln_1p();
    }
    let t = k * mu;
    let y_log_mu = if y == 0 { 0.0 } else { yf * mu.ln() };
    rising + y_log_mu - yf * t.ln_1p() - mu * ln1p_over_t(t) - ln_gamma(yf + 1.0)
}

/// Derivative of [`nb_logpmf`] with respect to `k` at fixed `mu`.
pub fn nb_logpmf_dk(y: u64, mu: f64, k: f64) -> f64 {
    let yf = y as f64;
    let mut acc = 0.0;
    for m in 1..y {
        let mf = m as f64;
        acc += mf / (1.0 + k * mf);
    }
    let t = k * mu;
    acc + mu * mu * f_over_t2(t) - yf * mu / (1.0 + t)
}

/// Second derivative of [`nb_logpmf`] with respect to `k` at fixed `mu`.
pub fn nb_logpmf_dk2(y: u64, mu: f64, k: f64) -> f64 {
    let yf = y as f64;
    let mut acc = 0.0;
    for m in 1..y {
        let mf = m as f64;
        let d = 1.0 + k * mf;
        acc -= mf * mf / (d * d);
    }
    let t = k * mu;
    acc + mu * mu * mu * g_over_t3(t) + yf * mu * mu / ((1.0 + t) * (1.0 + t))
}

/// Total log-likelihood at coefficients `beta` and dispersion `k`.
pub fn nb_loglik(beta: &[f64], k: f64, design: &NbDesign) -> f64 {
    let mu = design.means(beta);
    design
        .y
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| nb_logpmf(y, m, k))
        .sum()
}

/// Analytic gradient in `(beta, k)`; the last component is `d/dk`.
pub fn nb_score(beta: &[f64], k: f64, design: &NbDesign) -> Vec<f64> {
    let p = design.p();
    let mu = design.means(beta);
    let mut out = vec![0.0; p + 1];
    for (j, (&y, &m)) in design.y.iter().zip(&mu).enumerate() {
        let r = (y as f64 - m) / (1.0 + k * m);
        let row = design.x.row(j);
        for c in 0..p {
            out[c] += row[c] * r;
        }
        out[p] += nb_logpmf_dk(y, m, k);
    }
    out
}

/// Poisson log-likelihood, used as an independent reference for `k = 0`.
pub fn poisson_loglik(beta: &[f64], design: &NbDesign) -> f64 {
    let mu = design.means(beta);
    design
        .y
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| {
            let yf = y as f64;
            let t = if y == 0 { 0.0 } else { yf * m.ln() };
            t - m - ln_gamma(yf + 1.0)
        })
        .sum()
}
