use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use entroproj::exec::Execution;
use entroproj::gibbs::{run_conditional_sim, DeltaVariant, Proposal, SimConfig, SimMode, WeightLaw};
use entroproj::measures::{Density1D, Measure, TestFunction};
use entroproj::relative::{csiszar_measure, xi_curve, Cramer};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn simulation(c: &mut Criterion) {
    let r: Measure = Density1D::exponential(1.0).unwrap().into();
    let cfg = SimConfig {
        mode: SimMode::IidEmpirical,
        n: 200,
        delta: 0.05,
        variant: DeltaVariant::LowerTail,
        trials: 8192,
        seed: 42,
        proposal: Proposal::ExponentialTilt { y: 0.5 },
        weight_law: WeightLaw::default(),
        bins: (0..=20).map(|i| i as f64 * 0.5).collect(),
        top_k: 1,
    };
    let mut group = c.benchmark_group("conditional_sim");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_conditional_sim(black_box(&cfg), &r, &TestFunction::Identity, 2.0, None, exec).unwrap())
        });
    }
    group.finish();
}

fn cramer_sweep(c: &mut Criterion) {
    let cramer = Cramer::new(csiszar_measure().unwrap().into(), TestFunction::Identity).unwrap();
    let xs: Vec<f64> = (1..=32).map(|i| 0.1 * i as f64).collect();
    let mut group = c.benchmark_group("xi_curve");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| xi_curve(&cramer, black_box(&xs), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, simulation, cramer_sweep);
criterion_main!(benches);
