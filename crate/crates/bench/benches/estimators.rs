use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use countrate::empirical::analyze;
use countrate::nbglm::{fit_nb, marginal_rates_aipw};
use countrate::{Adjustment, InferenceConfig};
use countrate_bench::{copula_trial, stratified_trial, zinb_trial};

fn empirical(c: &mut Criterion) {
    let mut group = c.benchmark_group("empirical");
    for n in [400, 1000, 5000] {
        let data = copula_trial(n);
        for adj in [Adjustment::None, Adjustment::Ancova] {
            let cfg = InferenceConfig::with_adjustment(adj);
            group.bench_with_input(BenchmarkId::new(format!("{adj:?}"), n), &data, |b, d| {
                b.iter(|| analyze(black_box(d), &cfg, 1, 0).unwrap())
            });
        }
    }
    let data = stratified_trial(1000);
    let cfg = InferenceConfig::with_adjustment(Adjustment::Anhecova);
    group.bench_function("Anhecova/1000", |b| {
        b.iter(|| analyze(black_box(&data), &cfg, 1, 0).unwrap())
    });
    group.finish();
}

fn nb(c: &mut Criterion) {
    let mut group = c.benchmark_group("nb");
    for n in [400, 1000] {
        let data = copula_trial(n);
        group.bench_with_input(BenchmarkId::new("unadjusted", n), &data, |b, d| {
            b.iter(|| fit_nb(black_box(d), &[], false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("adjusted", n), &data, |b, d| {
            b.iter(|| fit_nb(black_box(d), &[], true).unwrap())
        });
    }
    let data = zinb_trial(1000);
    let fit = fit_nb(&data, &[], true).unwrap();
    group.bench_function("aipw/1000", |b| {
        b.iter(|| marginal_rates_aipw(black_box(&fit)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, empirical, nb);
criterion_main!(benches);
