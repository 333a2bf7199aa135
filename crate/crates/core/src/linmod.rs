//! Ordinary least squares with heteroskedasticity-consistent (sandwich)
//! covariance.
//!
//! Fits are computed from a thin QR factorization of the design, never by
//! inverting `X'X` formed explicitly. Rank is judged from the singular values
//! of the triangular factor, which equal those of the design.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::symmetrize;

/// Relative singular-value cutoff for declaring a design rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Leverage values this close to one make HC3 undefined.
const LEVERAGE_ONE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinModError {
    #[error("design is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("response has {found} rows but design has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("design has more columns ({p}) than rows ({n})")]
    TooFewRows { n: usize, p: usize },
    #[error("observation {row} has leverage 1; HC3 is undefined")]
    LeverageOne { row: usize },
}

/// Heteroskedasticity-consistent covariance flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HcFlavor {
    /// `omega_j = e_j^2`
    HC0,
    /// `omega_j = e_j^2 * n / (n - p)`
    HC1,
    /// `omega_j = e_j^2 / (1 - h_jj)^2`
    HC3,
}

impl HcFlavor {
    /// HC3 while any arm has fewer than 250 subjects, HC1 otherwise.
    pub fn auto(min_arm_size: usize) -> Self {
        if min_arm_size < 250 {
            HcFlavor::HC3
        } else {
            HcFlavor::HC1
        }
    }
}

impl std::str::FromStr for HcFlavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HC0" => Ok(HcFlavor::HC0),
            "HC1" => Ok(HcFlavor::HC1),
            "HC3" => Ok(HcFlavor::HC3),
            other => Err(format!(
                "unknown HC flavor `{other}` (expected HC0, HC1 or HC3)"
            )),
        }
    }
}

/// A dense design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>, column_names: Vec<String>) -> Self {
        assert_eq!(matrix.ncols(), column_names.len(), "one name per column");
        Self {
            matrix,
            column_names,
        }
    }

    /// Builds a design from row-major data, naming columns `c0, c1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = crate::stats::from_rows(rows);
        let names = (0..m.ncols()).map(|j| format!("c{j}")).collect();
        Self::new(m, names)
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Names of columns that add nothing to the span of the columns before them.
    fn collinear_columns(&self) -> Vec<String> {
        let mut kept: Vec<usize> = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..self.ncols() {
            let mut trial = kept.clone();
            trial.push(j);
            let sub = self.matrix.select_columns(&trial);
            if numerical_rank(&sub) == trial.len() {
                kept = trial;
            } else {
                dropped.push(self.column_names[j].clone());
            }
        }
        dropped
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// Result of an OLS fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Diagonal of the hat matrix.
    pub leverage: DVector<f64>,
    pub design: DesignMatrix,
}

impl OlsFit {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }
}

/// Least-squares fit of `response` on `design`.
pub fn fit_ols(design: &DesignMatrix, response: &[f64]) -> Result<OlsFit, LinModError> {
    let (n, p) = (design.nrows(), design.ncols());
    if response.len() != n {
        return Err(LinModError::DimensionMismatch {
            expected: n,
            found: response.len(),
        });
    }
    if p > n {
        return Err(LinModError::TooFewRows { n, p });
    }

    let qr = design.matrix.clone().qr();
    let r = qr.r();
    if numerical_rank(&r) < p {
        return Err(LinModError::RankDeficient {
            columns: design.collinear_columns(),
        });
    }
    let q = qr.q();
    let w = DVector::from_column_slice(response);
    let qtw = q.tr_mul(&w);
    let coef = r
        .solve_upper_triangular(&qtw)
        .ok_or_else(|| LinModError::RankDeficient {
            columns: design.collinear_columns(),
        })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| LinModError::RankDeficient {
            columns: design.collinear_columns(),
        })?;
    let mut xtx_inv = &r_inv * r_inv.transpose();
    symmetrize(&mut xtx_inv);

    let fitted = &design.matrix * &coef;
    let residuals = &w - &fitted;
    let leverage = DVector::from_iterator(n, q.row_iter().map(|row| row.norm_squared()));

    Ok(OlsFit {
        coef,
        residuals,
        fitted,
        xtx_inv,
        leverage,
        design: design.clone(),
    })
}

/// Per-observation residual multipliers such that the HC "meat" is
/// `sum_j (m_j e_j)^2 x_j x_j'`.
pub fn hc_residual_scale(fit: &OlsFit, flavor: HcFlavor) -> Result<DVector<f64>, LinModError> {
    let (n, p) = (fit.n(), fit.p());
    match flavor {
        HcFlavor::HC0 => Ok(DVector::from_element(n, 1.0)),
        HcFlavor::HC1 => {
            let s = if n > p {
                (n as f64 / (n - p) as f64).sqrt()
            } else {
                f64::INFINITY
            };
            Ok(DVector::from_element(n, s))
        }
        HcFlavor::HC3 => {
            let mut out = DVector::zeros(n);
            for (j, &h) in fit.leverage.iter().enumerate() {
                if 1.0 - h < LEVERAGE_ONE_TOLERANCE {
                    return Err(LinModError::LeverageOne { row: j });
                }
                out[j] = 1.0 / (1.0 - h);
            }
            Ok(out)
        }
    }
}

/// Sandwich covariance `(X'X)^-1 X' Omega X (X'X)^-1` of the OLS coefficients.
pub fn hc_covariance(fit: &OlsFit, flavor: HcFlavor) -> Result<DMatrix<f64>, LinModError> {
    let scale = hc_residual_scale(fit, flavor)?;
    let x = fit.design.matrix();
    let p = fit.p();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for j in 0..fit.n() {
        let e = fit.residuals[j] * scale[j];
        let w = e * e;
        if w == 0.0 {
            continue;
        }
        let row = x.row(j);
        for a in 0..p {
            let xa = row[a] * w;
            if xa == 0.0 {
                continue;
            }
            for b in a..p {
                meat[(a, b)] += xa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let mut cov = &fit.xtx_inv * meat * &fit.xtx_inv;
    symmetrize(&mut cov);
    Ok(cov)
}
