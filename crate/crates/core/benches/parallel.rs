//! Parallel vs sequential throughput of the per-path kernels.

use std::hint::black_box;

use cps_core::events::{event_member, EventSpec, TauRule};
use cps_core::extent::Extent;
use cps_core::par::{map_indexed, map_indexed_seq};
use cps_core::pathgen::{path_seed, ModelSpec, PathGenerator, SamplePath, TimeGrid};
use cps_core::retirement::{build_ladder, CrossingMode, LadderParams};
use cps_core::transforms::TransformRegistry;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const N_PATHS: usize = 256;

fn generator(spec: ModelSpec, n_steps: usize) -> PathGenerator {
    let grid = TimeGrid::new(1.0, n_steps).unwrap();
    PathGenerator::new(spec, grid, &TransformRegistry::with_builtins()).unwrap()
}

fn paths(spec: ModelSpec, n_steps: usize) -> Vec<SamplePath> {
    let g = generator(spec, n_steps);
    map_indexed_seq(N_PATHS, |i| g.sample(path_seed(7, i as u64)))
}

fn bench_fbm(c: &mut Criterion) {
    let mut group = c.benchmark_group("fbm_synthesis");
    group.throughput(Throughput::Elements(N_PATHS as u64));
    for n_steps in [1 << 10, 1 << 12] {
        let g = generator(ModelSpec::fbm(0.7, 1.0, 0.0), n_steps);
        let sample = |i: usize| g.sample(path_seed(7, i as u64)).terminal();
        group.bench_with_input(BenchmarkId::new("parallel", n_steps), &n_steps, |b, _| {
            b.iter(|| black_box(map_indexed(N_PATHS, sample)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n_steps), &n_steps, |b, _| {
            b.iter(|| black_box(map_indexed_seq(N_PATHS, sample)))
        });
    }
    group.finish();
}

fn bench_ladders(c: &mut Criterion) {
    let data = paths(ModelSpec::brownian(1.0, 0.0), 1 << 12);
    let params = LadderParams::new(0.1, CrossingMode::Interpolated).unwrap();
    let ladder = |i: usize| build_ladder(&data[i], &params).retired_at;
    let mut group = c.benchmark_group("ladder");
    group.throughput(Throughput::Elements(N_PATHS as u64));
    group.bench_function("parallel", |b| b.iter(|| black_box(map_indexed(N_PATHS, ladder))));
    group.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_seq(N_PATHS, ladder))));
    group.finish();
}

fn bench_events(c: &mut Criterion) {
    let data = paths(ModelSpec::brownian(1.0, 0.0).with_transform("piecewise_ex3"), 1 << 10);
    let spec = EventSpec {
        j: 1,
        tau: TauRule::FirstHit { level: 0.3, cap: 0.4 },
        h: 0.5,
        delta: Extent::Finite(0.75),
        c: 0.25,
    };
    let member = |i: usize| event_member(&data[i], &spec).unwrap();
    let mut group = c.benchmark_group("event_membership");
    group.throughput(Throughput::Elements(N_PATHS as u64));
    group.bench_function("parallel", |b| b.iter(|| black_box(map_indexed(N_PATHS, member))));
    group.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_seq(N_PATHS, member))));
    group.finish();
}

criterion_group!(benches, bench_fbm, bench_ladders, bench_events);
criterion_main!(benches);
