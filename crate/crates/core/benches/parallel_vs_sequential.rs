use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ufo_core::eval::{sweep_seeds, DataSource, Execution};
use ufo_core::graph::SbmConfig;
use ufo_core::tensor::{kernels, Rng};
use ufo_core::trainer::{Method, Mode, Settings};

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let mut rng = Rng::new(n as u64);
        let a = rng.normal_tensor(n, n).into_data();
        let b = rng.normal_tensor(n, n).into_data();
        let mut out = vec![0.0; n * n];
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |bench, &n| {
            bench.iter(|| kernels::matmul_sequential(black_box(&a), black_box(&b), n, n, n, &mut out))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |bench, &n| {
            bench.iter(|| kernels::matmul(black_box(&a), black_box(&b), n, n, n, &mut out))
        });
    }
    group.finish();
}

fn bench_seed_sweep(c: &mut Criterion) {
    let mut settings = Settings::desk();
    settings.train.epochs = 20;
    settings.train.flow_epochs = 5;
    settings.train.flow_refit_epochs = 5;
    let data = DataSource::Synthetic(SbmConfig {
        nodes_per_class: 20,
        ..SbmConfig::default()
    });
    let seeds = [0, 1, 2, 3];
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |bench| {
            bench.iter(|| sweep_seeds(&settings, &data, Method::from(Mode::Bare), &seeds, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_seed_sweep);
criterion_main!(benches);
