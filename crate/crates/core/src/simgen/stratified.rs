use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{gen_exposure_from, nb_quantile, to_dataset, ExposureMixture, RngStream, SimError};
use crate::domain::{Dataset, SubjectRecord};

/// Two-arm trial randomized in permuted blocks within prognostic strata.
///
/// Outcome mean is `d exp(beta0 + beta_trt A + gamma_s + beta_x x)` with
/// `x ~ N(0, 1)`, NB2 dispersion `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedTrialSpec {
    pub n_total: usize,
    /// `(probability, log-rate effect)` per stratum.
    pub strata: Vec<(f64, f64)>,
    pub beta0: f64,
    pub beta_trt: f64,
    pub beta_x: f64,
    pub k: f64,
    /// Even block length for within-stratum permuted blocks.
    pub block_size: usize,
    pub exposure: ExposureMixture,
}

impl Default for StratifiedTrialSpec {
    fn default() -> Self {
        Self {
            n_total: 1000,
            strata: vec![(0.25, -1.0), (0.25, -0.2), (0.25, 0.4), (0.25, 1.2)],
            beta0: 0.5f64.ln(),
            beta_trt: 0.0,
            beta_x: 0.3,
            k: 0.5,
            block_size: 4,
            exposure: ExposureMixture::default(),
        }
    }
}

pub fn gen_stratified_trial(
    spec: &StratifiedTrialSpec,
    stream: RngStream,
) -> Result<Dataset, SimError> {
    if spec.strata.is_empty() || spec.block_size == 0 || spec.block_size % 2 != 0 {
        return Err(SimError::InvalidSpec(
            "need strata and an even block size".into(),
        ));
    }
    let mut rng = stream.rng();
    let total_p: f64 = spec.strata.iter().map(|s| s.0).sum();
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); spec.strata.len()];
    let d = gen_exposure_from(&spec.exposure, spec.n_total, &mut rng);
    let mut records = Vec::with_capacity(spec.n_total);
    for (j, &dj) in d.iter().enumerate() {
        let mut u = rng.random::<f64>() * total_p;
        let mut s = spec.strata.len() - 1;
        for (i, &(p, _)) in spec.strata.iter().enumerate() {
            if u < p {
                s = i;
                break;
            }
            u -= p;
        }
        if blocks[s].is_empty() {
            let mut b: Vec<usize> = (0..spec.block_size).map(|i| i % 2).collect();
            b.shuffle(&mut rng);
            blocks[s] = b;
        }
        let arm = blocks[s].pop().unwrap_or(0);
        let x: f64 = StandardNormal.sample(&mut rng);
        let eta = spec.beta0 + spec.beta_trt * arm as f64 + spec.strata[s].1 + spec.beta_x * x;
        let y = nb_quantile(rng.random::<f64>(), eta.exp() * dj, spec.k);
        records.push(
            SubjectRecord::new(format!("{j:06}"), arm, y, dj)
                .with_covariates(vec![x])
                .with_stratum(format!("s{s}")),
        );
    }
    to_dataset(records, 2, vec!["x".into()])
}
