use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use std::sync::Arc;
use ym2_core::graph::{holonomies, FigureEight};
use ym2_core::noise::NoiseField;
use ym2_core::smooth::{self, fixtures};
use ym2_core::transport::{transport_horizontal, HorizontalCurve};
use ym2_core::verify::{self, Setup};
use ym2_core::{GroupContext, GroupKind};

const GROUPS: [GroupKind; 3] = [GroupKind::U1, GroupKind::SU2, GroupKind::SUN(3)];

fn noise_sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("noise_sample");
    for kind in GROUPS {
        let s = Setup::benchmark(kind).unwrap();
        g.throughput(Throughput::Elements(s.window.cells() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(kind), &s, |b, s| {
            let mut seed = 0u64;
            b.iter(|| {
                seed += 1;
                black_box(NoiseField::sample(s.ctx.clone(), s.window, seed).unwrap())
            })
        });
    }
    g.finish();
}

fn horizontal_transport(c: &mut Criterion) {
    let mut g = c.benchmark_group("transport_horizontal");
    let curve = HorizontalCurve::flat(-0.5, 0.5, 0.5).unwrap();
    for kind in GROUPS {
        let s = Setup::benchmark(kind).unwrap();
        let field = s.field(7).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(kind), &field, |b, f| {
            b.iter(|| black_box(transport_horizontal(f, &curve, s.substeps).unwrap()))
        });
    }
    g.finish();
}

fn figure_eight_holonomies(c: &mut Criterion) {
    let mut g = c.benchmark_group("figure_eight_holonomies");
    for kind in GROUPS {
        let s = Setup::benchmark(kind).unwrap();
        let (graph, _) = FigureEight::from_areas(0.5, 0.5).build(&s.window, s.ctx.matrix_dim()).unwrap();
        let field = s.field(3).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(kind), &field, |b, f| {
            b.iter(|| black_box(holonomies(f, &graph, s.substeps).unwrap()))
        });
    }
    g.finish();
}

fn mm_replicas(c: &mut Criterion) {
    let mut g = c.benchmark_group("mm_lhs_replicas");
    g.sample_size(10);
    let n = 1024;
    g.throughput(Throughput::Elements(n));
    for kind in [GroupKind::U1, GroupKind::SU2] {
        let s = Setup::benchmark(kind).unwrap();
        let (graph, u) = FigureEight::from_areas(0.5, 0.5).build(&s.window, s.ctx.matrix_dim()).unwrap();
        g.bench_function(BenchmarkId::from_parameter(kind), |b| {
            b.iter(|| black_box(verify::mm_lhs(&s, &graph, &u, n, 11).unwrap()))
        });
    }
    g.finish();
}

fn smooth_transport(c: &mut Criterion) {
    let mut g = c.benchmark_group("smooth_ode_transport");
    let ctx = Arc::new(GroupContext::new(GroupKind::SU2).unwrap());
    let a = fixtures::connection(&ctx);
    let path = fixtures::wiggle();
    for steps in [100usize, 800] {
        g.bench_with_input(BenchmarkId::from_parameter(steps), &steps, |b, &n| {
            b.iter(|| black_box(smooth::ode_transport(&a, &path, n)))
        });
    }
    g.finish();
}

criterion_group!(benches, noise_sampling, horizontal_transport, figure_eight_holonomies, mm_replicas, smooth_transport);
criterion_main!(benches);
