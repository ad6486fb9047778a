use std::hint::black_box;

use aqnn_core::dataset::generate_synthetic;
use aqnn_core::sprint::{prepare_sample, sprint_c, sprint_v, two_phase};
use aqnn_core::*;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn dataset(n: usize) -> Dataset {
    generate_synthetic(&SyntheticGenConfig {
        n_objects: n,
        proxy_noise_sigma: 0.25,
        seed: 11,
        ..Default::default()
    })
    .unwrap()
}

fn query(ds: &Dataset) -> QuerySpec {
    // Pick a target with a non-trivial neighborhood.
    let target = (0..ds.len()).step_by(97).next().unwrap();
    QuerySpec::new(QueryTarget::Id(target), 5.5, Metric::Euclidean, Aggregation::Avg)
}

fn context(ds: &Dataset, q: &QuerySpec, s: usize, s_p: usize) -> SelectionContext {
    let (o, p) = (EmbeddingModel::oracle(), EmbeddingModel::proxy());
    (0..)
        .find_map(|seed| {
            let cfg = SprintConfig {
                s,
                s_p,
                seed,
                ..Default::default()
            };
            prepare_sample(ds, q, &cfg, &o, &p, &mut EmbeddingSession::new()).ok()
        })
        .unwrap()
        .context
}

fn searches(c: &mut Criterion) {
    let ds = dataset(20_000);
    let q = query(&ds);
    let mut g = c.benchmark_group("search");
    for (s, s_p) in [(1000, 600), (5000, 2000)] {
        let ctx = context(&ds, &q, s, s_p);
        let id = format!("{s}/{s_p}");
        g.bench_with_input(BenchmarkId::new("sprint_v", &id), &ctx, |b, ctx| {
            b.iter(|| sprint_v(black_box(ctx), 0.01))
        });
        g.bench_with_input(BenchmarkId::new("sprint_c", &id), &ctx, |b, ctx| {
            b.iter(|| sprint_c(black_box(ctx), 0.01, 30))
        });
        g.bench_with_input(BenchmarkId::new("two_phase", &id), &ctx, |b, ctx| {
            b.iter(|| two_phase(black_box(ctx), 0.01, 0.01, 30))
        });
        g.bench_with_input(BenchmarkId::new("select_at_0.9", &id), &ctx, |b, ctx| {
            b.iter(|| ctx.select(black_box(0.9), "pqe_pt"))
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    let (o, p) = (EmbeddingModel::oracle(), EmbeddingModel::proxy());
    for n in [10_000, 100_000] {
        let ds = dataset(n);
        let q = query(&ds);
        let mut seed = 0;
        g.bench_function(BenchmarkId::new("select_neighbors", n), |b| {
            b.iter(|| {
                seed += 1;
                let cfg = SprintConfig {
                    seed,
                    ..Default::default()
                };
                select_neighbors(&q, &cfg, &ds, &o, &p).ok()
            })
        });
    }
    g.finish();
}

fn brute_force(c: &mut Criterion) {
    let ds = dataset(100_000);
    let q = query(&ds);
    let QueryTarget::Id(target) = q.target else { unreachable!() };
    let q_emb = ds.objects()[target].oracle_embedding.clone().unwrap();
    c.bench_function("exact_frnn/100000", |b| {
        b.iter(|| {
            exact_frnn(
                ds.objects()
                    .iter()
                    .map(|o| (o.id, o.oracle_embedding.as_deref().unwrap())),
                black_box(&q_emb),
                5.5,
                Metric::Euclidean,
                Space::Oracle,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, searches, pipeline, brute_force);
criterion_main!(benches);
