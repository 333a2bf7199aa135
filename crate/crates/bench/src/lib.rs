//! Fixed datasets for the benchmarks.

use countrate::simgen::{gen_dataset, gen_stratified_trial, scenario, StratifiedTrialSpec};
use countrate::{Dataset, RngStream};

pub const SEED: u64 = 42;

/// One Case A trial with `n` subjects per arm and a moderately predictive
/// baseline count.
pub fn copula_trial(n: usize) -> Dataset {
    let spec = scenario("A", n).expect("preset").with_rho(0.5);
    gen_dataset(&spec, 0.66, RngStream::new(SEED, 0)).expect("valid preset")
}

/// One Case G trial with `n` subjects per arm.
pub fn zinb_trial(n: usize) -> Dataset {
    let spec = scenario("G", n).expect("preset");
    gen_dataset(&spec, 0.0, RngStream::new(SEED, 1)).expect("valid preset")
}

/// Stratified-randomized trial with `n_total` subjects.
pub fn stratified_trial(n_total: usize) -> Dataset {
    let spec = StratifiedTrialSpec {
        n_total,
        ..StratifiedTrialSpec::default()
    };
    gen_stratified_trial(&spec, RngStream::new(SEED, 2)).expect("valid spec")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_expected_shape() {
        assert_eq!(copula_trial(50).len(), 100);
        assert_eq!(zinb_trial(50).covariate_count(), 2);
        assert!(stratified_trial(200).has_strata());
    }
}
