use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use evcoop_core::flsim::{generate_partitioned_data, train_fedavg, FedAvgConfig, HeterogeneityConfig, Optimizer};
use evcoop_core::oracle::{best_response, GridSpec};
use evcoop_core::{
    build_profit_matrix, market_partition, pricing_equilibrium, ModelParams, PerStation, QosProfile, StationId,
};

fn stage_solvers(c: &mut Criterion) {
    let params = ModelParams::default();
    let q = PerStation::new(3.2, 3.0);
    let p = PerStation::new(1.9, 1.8);
    c.bench_function("pricing_equilibrium", |b| {
        b.iter(|| pricing_equilibrium(black_box(&q), black_box(&params)))
    });
    c.bench_function("market_partition", |b| {
        b.iter(|| market_partition(black_box(&p), black_box(&q), black_box(&params)))
    });
    let qos = QosProfile::new(PerStation::new(34.1, 39.6), PerStation::new(36.0, 41.1)).unwrap();
    c.bench_function("build_profit_matrix", |b| {
        b.iter(|| build_profit_matrix(black_box(&qos), black_box(&params)))
    });
    let grid = GridSpec::default_for(&q, &params);
    c.bench_function("best_response_4001", |b| {
        b.iter(|| best_response(StationId::A, black_box(1.8), &q, &params, &grid))
    });
}

fn fedavg(c: &mut Criterion) {
    let data = generate_partitioned_data(&HeterogeneityConfig {
        n_per_station: 500,
        ..HeterogeneityConfig::default()
    })
    .unwrap();
    let cfg = FedAvgConfig {
        rounds: 10,
        ..FedAvgConfig::default()
    };
    let opt = Optimizer::default();
    let mut group = c.benchmark_group("flsim");
    group.sample_size(10);
    group.bench_function("fedavg_500x10", |b| {
        b.iter(|| train_fedavg(PerStation::new(&data.stations.a, &data.stations.b), &cfg, &opt, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, stage_solvers, fedavg);
criterion_main!(benches);
