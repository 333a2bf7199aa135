use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use countrate::harness::{run_replicate, MethodSpec};
use countrate::simgen::{calibrate_with, gen_dataset, scenario, CalibrationSettings};
use countrate::RngStream;

fn generation(c: &mut Criterion) {
    let a = scenario("A", 1000).unwrap().with_rho(0.5);
    let g = scenario("G", 1000).unwrap();
    c.bench_function("gen/copula/1000", |b| {
        b.iter(|| gen_dataset(black_box(&a), 0.66, RngStream::new(1, 0)).unwrap())
    });
    c.bench_function("gen/zinb/1000", |b| {
        b.iter(|| gen_dataset(black_box(&g), 0.0, RngStream::new(1, 0)).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let spec = scenario("D", 100).unwrap().with_rho(0.5);
    let settings = CalibrationSettings {
        draws: 20_000,
        ..CalibrationSettings::default()
    };
    let mut group = c.benchmark_group("calibrate");
    group.sample_size(10);
    group.bench_function("D/0.5/20k", |b| {
        b.iter(|| calibrate_with(black_box(&spec), &settings).unwrap())
    });
    group.finish();
}

fn replicate(c: &mut Criterion) {
    let spec = scenario("A", 400).unwrap().with_rho(0.5);
    let methods = MethodSpec::standard();
    c.bench_function("replicate/A/400/four-methods", |b| {
        b.iter(|| {
            run_replicate(black_box(&spec), 0.66, &methods, RngStream::new(1, 0), 0.05).unwrap()
        })
    });
}

criterion_group!(benches, generation, calibration, replicate);
criterion_main!(benches);
