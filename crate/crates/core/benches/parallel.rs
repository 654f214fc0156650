use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tinyprop::datasets::synth_anomaly;
use tinyprop::grid::{run_compare, Experiment};
use tinyprop::network::{Activation, LossKind, NetworkSpec};
use tinyprop::par::Execution;
use tinyprop::trainer::{evaluate_with, TrainConfig};
use tinyprop::{EngineKind, TinyPropConfig};

fn spec() -> NetworkSpec {
    NetworkSpec {
        widths: vec![64, 32, 16, 2],
        hidden: Activation::Relu,
        output: Activation::SoftmaxCe,
        loss: LossKind::CrossEntropy,
    }
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn evaluation(c: &mut Criterion) {
    let data = synth_anomaly(20_000, 1).unwrap();
    let net = spec().build(1).unwrap();
    let mut group = c.benchmark_group("evaluate_20k");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_with(&net, &data, exec).unwrap())
        });
    }
    group.finish();
}

fn grid_cells(c: &mut Criterion) {
    let (train, test) = synth_anomaly(400, 2).unwrap().split_off_test(0.25).unwrap();
    let network = spec();
    let config = TrainConfig::default();
    let exp = Experiment { network: &network, train: &train, test: &test, config: &config };
    let engines = [
        EngineKind::Full,
        EngineKind::FixedTopK { ratio: 0.33 },
        EngineKind::TinyProp(TinyPropConfig::SCRATCH),
    ];
    let seeds = [0, 1];
    let mut group = c.benchmark_group("compare_3x2_cells");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_compare(&exp, &engines, &seeds, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, evaluation, grid_cells);
criterion_main!(benches);
