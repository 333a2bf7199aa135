use nalgebra::DMatrix;

use crate::domain::Dataset;

/// Cell-means design for the NB model: one indicator per arm, followed by the
/// selected covariates centered at their pooled mean. The offset is
/// `ln(exposure)`.
#[derive(Debug, Clone)]
pub struct NbDesign {
    pub x: DMatrix<f64>,
    pub y: Vec<u64>,
    pub offset: Vec<f64>,
    pub exposure: Vec<f64>,
    pub arm_of: Vec<usize>,
    pub arms: usize,
    pub column_names: Vec<String>,
}

impl NbDesign {
    /// `covariates` are column indices into the dataset's covariates.
    pub fn new(data: &Dataset, covariates: &[usize]) -> Self {
        let n = data.len();
        let arms = data.arm_count();
        let q = covariates.len();
        let mut x = DMatrix::zeros(n, arms + q);
        for (j, r) in data.records().iter().enumerate() {
            x[(j, r.arm)] = 1.0;
        }
        let mut column_names: Vec<String> = (0..arms).map(|a| format!("arm{a}")).collect();
        for (c, &col) in covariates.iter().enumerate() {
            let mean = data
                .records()
                .iter()
                .map(|r| r.covariates[col])
                .sum::<f64>()
                / n as f64;
            for (j, r) in data.records().iter().enumerate() {
                x[(j, arms + c)] = r.covariates[col] - mean;
            }
            column_names.push(data.covariate_names()[col].clone());
        }
        Self {
            x,
            y: data.records().iter().map(|r| r.count).collect(),
            offset: data.records().iter().map(|r| r.exposure.ln()).collect(),
            exposure: data.records().iter().map(|r| r.exposure).collect(),
            arm_of: data.records().iter().map(|r| r.arm).collect(),
            arms,
            column_names,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Linear predictor without offset.
    pub fn linear(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.p();
        (0..self.n())
            .map(|j| (0..p).map(|c| self.x[(j, c)] * beta[c]).sum())
            .collect()
    }

    pub fn means(&self, beta: &[f64]) -> Vec<f64> {
        self.linear(beta)
            .into_iter()
            .zip(&self.offset)
            .map(|(eta, off)| (eta + off).exp())
            .collect()
    }

    /// Rate (mean per unit exposure) for subject `j` had it been assigned to `arm`.
    pub fn counterfactual_rate(&self, beta: &[f64], j: usize, arm: usize) -> f64 {
        let mut eta = beta[arm];
        for c in self.arms..self.p() {
            eta += self.x[(j, c)] * beta[c];
        }
        eta.exp()
    }
}
