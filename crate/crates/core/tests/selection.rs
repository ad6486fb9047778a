use std::collections::BTreeSet;

use aqnn_core::dataset::generate_synthetic;
use aqnn_core::sprint::{draw_pilot, draw_sample, select_with, sprint_c, Method};
use aqnn_core::*;
use proptest::prelude::*;

fn cands(d: &[f64]) -> Vec<Candidate> {
    d.iter()
        .enumerate()
        .map(|(id, &proxy_dist)| Candidate { id, proxy_dist })
        .collect()
}

/// Hand-checked: slack = sqrt(ln 20 / 2n). Thresholds ending on a true
/// neighbor sit at n = 1, 2, 3, 4, 6, 9 with lower bounds 0, .135, .293,
/// .388, .334, .259.
#[test]
fn ten_point_selector() {
    let d: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let labels = [true, true, true, true, false, true, false, false, true, false];
    let truth = NeighborSet::new((0..10).filter(|&i| labels[i]), Space::Oracle, "t");
    let all: Vec<usize> = (0..10).collect();
    let run = |t: f64| {
        pqe_pt(&cands(&d), &all, &truth, PrecisionTarget::new(t, 0.05).unwrap(), 0.0)
            .unwrap()
            .members
    };
    // Nothing reaches 0.8: fall back to the best lower bound (n = 4).
    assert_eq!(run(0.8), (0..4).collect());
    // n = 4 and n = 6 qualify at 0.3; the larger one wins.
    assert_eq!(run(0.3), (0..6).collect());
    assert_eq!(run(0.0), (0..9).collect());
}

fn naive_selection(d: &[f64], truth: &[bool], t: f64, delta: f64) -> BTreeSet<usize> {
    let slack = |n: usize| ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt();
    let mut best_q: Option<f64> = None;
    let mut best_lb: Option<(f64, f64)> = None;
    for j in (0..d.len()).filter(|&j| truth[j]) {
        let tau = d[j];
        let n = d.iter().filter(|&&x| x <= tau).count();
        let tp = (0..d.len()).filter(|&i| d[i] <= tau && truth[i]).count();
        let lb = (tp as f64 / n as f64 - slack(n)).max(0.0);
        if lb >= t && best_q.is_none_or(|b| tau > b) {
            best_q = Some(tau);
        }
        if best_lb.is_none_or(|(l, b)| lb > l || (lb == l && tau > b)) {
            best_lb = Some((lb, tau));
        }
    }
    match best_q.or(best_lb.map(|p| p.1)) {
        Some(tau) => (0..d.len()).filter(|&i| d[i] <= tau).collect(),
        None => BTreeSet::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn selector_matches_exhaustive_search(
        raw in prop::collection::vec((0u32..60, 0.0f64..1.0), 5..250),
        t in 0.0f64..1.0,
    ) {
        let d: Vec<f64> = raw.iter().map(|(k, _)| *k as f64 / 10.0).collect();
        // True neighbors get rarer as the proxy distance grows.
        let truth: Vec<bool> = raw.iter().map(|(k, u)| *u < 1.0 - *k as f64 / 60.0).collect();
        let ids: Vec<usize> = (0..d.len()).collect();
        let set = NeighborSet::new(ids.iter().copied().filter(|&i| truth[i]), Space::Oracle, "t");
        let got = pqe_pt(&cands(&d), &ids, &set, PrecisionTarget::new(t, 0.05).unwrap(), 100.0)
            .unwrap()
            .members;
        prop_assert_eq!(got, naive_selection(&d, &truth, t, 0.05));
    }

    #[test]
    fn balanced_selection_has_unbiased_pct(
        s in 20usize..400,
        frac in 0.05f64..0.9,
        swap in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let on_s_len = ((s as f64 * frac) as usize).max(1);
        let sample = draw_sample(s, s, seed).unwrap();
        let on_s: BTreeSet<usize> = sample[..on_s_len].iter().copied().collect();
        let outside: Vec<usize> = sample[on_s_len..].to_vec();
        let k = ((on_s_len.min(outside.len()) as f64) * swap) as usize;
        let mut selected: BTreeSet<usize> = on_s.iter().copied().skip(k).collect();
        selected.extend(outside.iter().take(k));
        let values = vec![1.0; selected.len()];
        let pct = aggregate(Aggregation::Pct, &values, &AggregationContext::sample(s, s * 7)).unwrap();
        prop_assert_eq!(pct, on_s.len() as f64 / s as f64);
    }
}

fn zero_noise() -> Dataset {
    generate_synthetic(&SyntheticGenConfig {
        n_objects: 3000,
        embedding_dim: 8,
        n_clusters: 4,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn zero_noise_methods_recover_exact_sample_neighborhood() {
    let ds = zero_noise();
    let (o, p) = (EmbeddingModel::oracle(), EmbeddingModel::proxy());
    let mut checked = 0;
    for trial in 0..15u64 {
        let target = (trial as usize * 97) % ds.len();
        let q = QuerySpec::new(QueryTarget::Id(target), 2.5, Metric::Euclidean, Aggregation::Avg);
        let cfg = SprintConfig {
            s: 500,
            s_p: 250,
            seed: trial,
            ..Default::default()
        };
        let q_emb = ds.objects()[target].oracle_embedding.clone().unwrap();
        for method in [Method::SprintV, Method::SprintC, Method::TwoPhase] {
            let sel = match select_with(method, &q, &cfg, &ds, &o, &p) {
                Ok(s) => s,
                Err(Error::DegeneratePilot) => continue,
                Err(e) => panic!("{e}"),
            };
            let exact = exact_frnn(
                sel.sample_ids
                    .iter()
                    .map(|&id| (id, ds.objects()[id].oracle_embedding.as_deref().unwrap())),
                &q_emb,
                2.5,
                Metric::Euclidean,
                Space::Oracle,
            )
            .unwrap();
            assert_eq!(sel.set.members, exact.members, "{method} trial {trial}");
            checked += 1;
        }
    }
    assert!(checked >= 30, "only {checked} non-degenerate runs");
}

#[test]
fn pipeline_call_accounting() {
    let ds = zero_noise();
    let (o, p) = (EmbeddingModel::oracle(), EmbeddingModel::proxy());
    let mut outside = ds.objects()[0].clone();
    outside.id = 12345;
    let q = QuerySpec::new(QueryTarget::External(outside), 2.5, Metric::Euclidean, Aggregation::Sum);
    let cfg = SprintConfig {
        s: 600,
        s_p: 150,
        seed: 4,
        ..Default::default()
    };
    let sel = select_neighbors(&q, &cfg, &ds, &o, &p).unwrap();
    assert_eq!(sel.method, Method::TwoPhase);
    assert_eq!(sel.calls.oracle_calls, 151);
    assert_eq!(sel.calls.proxy_calls, 601);
    assert_eq!(sel.pilot_ids.len(), 150);
    let sample: BTreeSet<usize> = sel.sample_set();
    assert!(sel.pilot_ids.iter().all(|id| sample.contains(id)));
    assert!(sel.set.members.iter().all(|id| sample.contains(id)));
}

#[test]
fn balancing_search_on_a_noisy_pilot() {
    // Distances 0..2000; neighbors dominate below 1000 with label noise near
    // the boundary, so precision and recall cross smoothly.
    let n = 2000;
    let d: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let truth = |i: usize| {
        let x = i as f64 / n as f64;
        let h = ((i as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0;
        h < 1.0 / (1.0 + ((x - 0.5) * 12.0).exp())
    };
    let labels: Vec<(usize, bool)> = (0..n).map(|i| (i, truth(i))).collect();
    let ctx = SelectionContext::new(cands(&d), &labels, 1000.0, 0.05).unwrap();
    let res = sprint_c(&ctx, 0.02, 30);
    assert!(res.pilot.gap() <= 0.02, "{:?}", res.pilot);
    // Every fixed target on a coarse grid has a gap at least this small or
    // exceeds the tolerance.
    let best = (0..=100)
        .map(|k| ctx.pilot_metrics(k as f64 / 100.0).gap())
        .fold(f64::INFINITY, f64::min);
    assert!(res.pilot.gap() <= best.max(0.02));
}

#[test]
fn sampling_is_uniform() {
    let (n, s, sp, runs) = (100usize, 10usize, 4usize, 10_000u64);
    let mut in_sample = vec![0u32; n];
    let mut in_pilot = vec![0u32; n];
    for seed in 0..runs {
        let sample = draw_sample(n, s, seed).unwrap();
        for &id in &sample {
            in_sample[id] += 1;
        }
        for id in draw_pilot(&sample, sp, seed).unwrap() {
            in_pilot[id] += 1;
        }
    }
    let check = |counts: &[u32], p: f64| {
        let sd = (p * (1.0 - p) / runs as f64).sqrt();
        for (id, &c) in counts.iter().enumerate() {
            let f = c as f64 / runs as f64;
            assert!((f - p).abs() < 4.5 * sd, "id {id}: {f} vs {p}");
        }
    };
    check(&in_sample, s as f64 / n as f64);
    check(&in_pilot, sp as f64 / n as f64);
}
