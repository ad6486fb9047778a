//! The selection pipeline: sampling, pilot labelling and the three
//! precision-target searches.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, Aggregation, AggregationContext, Sensitivity};
use crate::dataset::{DataObject, Dataset};
use crate::error::{Error, Result};
use crate::frnn::{apply_threshold, dist, Calibration, Candidate, Metric, NeighborSet, Prf1, Space};
use crate::models::{EmbeddingModel, EmbeddingSession, LedgerCounts, EXTERNAL_ID};
use crate::rng::rng_for;
use crate::search::{balance_search, ternary_max};

/// Half-width of the Two-Phase refinement window around the balanced target.
pub const TWO_PHASE_WINDOW: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprintConfig {
    /// Sample size `s`.
    pub s: usize,
    /// Pilot size `s_p`.
    pub s_p: usize,
    /// Ternary-search width tolerance.
    pub omega_v: f64,
    /// Precision–recall gap tolerance.
    pub omega_c: f64,
    pub alpha: f64,
    /// Failure probability of the selector's precision bound; `alpha` when unset.
    pub delta: Option<f64>,
    /// Cap on bisection probes.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SprintConfig {
    fn default() -> Self {
        SprintConfig {
            s: 1000,
            s_p: 600,
            omega_v: 0.01,
            omega_c: 0.01,
            alpha: 0.05,
            delta: None,
            max_iters: 30,
            seed: 0,
        }
    }
}

impl SprintConfig {
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.alpha)
    }

    pub fn validate(&self, population: usize) -> Result<()> {
        if self.s_p == 0 || self.s == 0 {
            return Err(Error::invalid("s", "sample and pilot sizes must be positive"));
        }
        if self.s_p > self.s {
            return Err(Error::invalid("s_p", format!("pilot size {} exceeds sample size {}", self.s_p, self.s)));
        }
        if self.s > population {
            return Err(Error::SampleTooLarge {
                requested: self.s,
                available: population,
            });
        }
        for (name, v) in [("omega_v", self.omega_v), ("omega_c", self.omega_c)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(if name == "omega_v" { "omega_v" } else { "omega_c" }, format!("{v} is outside (0, 1)")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("{} is outside (0, 1)", self.alpha)));
        }
        let d = self.delta();
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::invalid("delta", format!("{d} is outside (0, 1)")));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryTarget {
    /// A member of the dataset.
    Id(usize),
    /// An object outside the dataset; its id is replaced by [`EXTERNAL_ID`].
    External(DataObject),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub target: QueryTarget,
    pub radius: f64,
    pub metric: Metric,
    pub agg: Aggregation,
}

impl QuerySpec {
    pub fn new(target: QueryTarget, radius: f64, metric: Metric, agg: Aggregation) -> Self {
        QuerySpec {
            target,
            radius,
            metric,
            agg,
        }
    }

    pub fn sensitivity(&self) -> Sensitivity {
        self.agg.sensitivity()
    }

    pub fn target_object<'a>(&'a self, ds: &'a Dataset) -> Result<std::borrow::Cow<'a, DataObject>> {
        match &self.target {
            QueryTarget::Id(id) => ds
                .get(*id)
                .map(std::borrow::Cow::Borrowed)
                .ok_or_else(|| Error::invalid("query", format!("id {id} is not in the dataset"))),
            QueryTarget::External(obj) => {
                let mut obj = obj.clone();
                obj.id = EXTERNAL_ID;
                Ok(std::borrow::Cow::Owned(obj))
            }
        }
    }
}

/// Neighbor-selection strategies over a prepared sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Method {
    SprintV,
    SprintC,
    TwoPhase,
    /// The calibrated selector at a fixed precision target.
    PqePtFixed(f64),
}

impl Method {
    /// The strategy matched to an aggregate's sensitivity.
    pub fn for_aggregation(agg: Aggregation) -> Self {
        match agg.sensitivity() {
            Sensitivity::Value => Method::SprintV,
            Sensitivity::Count => Method::SprintC,
            Sensitivity::Both => Method::TwoPhase,
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SprintV => f.write_str("sprint_v"),
            Method::SprintC => f.write_str("sprint_c"),
            Method::TwoPhase => f.write_str("two_phase"),
            Method::PqePtFixed(t) => write!(f, "pqe_pt_fixed({t})"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sprint_v" => return Ok(Method::SprintV),
            "sprint_c" => return Ok(Method::SprintC),
            "two_phase" => return Ok(Method::TwoPhase),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("pqe_pt_fixed(").and_then(|r| r.strip_suffix(')')) {
            let t: f64 = inner
                .trim()
                .parse()
                .map_err(|_| Error::invalid("method", format!("bad target in {s:?}")))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("method", format!("target {t} outside [0, 1]")));
            }
            return Ok(Method::PqePtFixed(t));
        }
        Err(Error::invalid("method", format!("unknown method {s:?}")))
    }
}

/// Uniform sample of `s` ids out of `0..population` without replacement.
pub fn draw_sample(population: usize, s: usize, seed: u64) -> Result<Vec<usize>> {
    if s > population {
        return Err(Error::SampleTooLarge {
            requested: s,
            available: population,
        });
    }
    let mut rng = rng_for(seed, "sample", 0);
    Ok(index::sample(&mut rng, population, s).into_vec())
}

/// Uniform subsample of `s_p` members of `sample` without replacement.
pub fn draw_pilot(sample: &[usize], s_p: usize, seed: u64) -> Result<Vec<usize>> {
    if s_p > sample.len() {
        return Err(Error::SampleTooLarge {
            requested: s_p,
            available: sample.len(),
        });
    }
    let mut rng = rng_for(seed, "pilot", 0);
    Ok(index::sample(&mut rng, sample.len(), s_p)
        .into_iter()
        .map(|i| sample[i])
        .collect())
}

/// The sample with proxy distances and the oracle-labelled pilot.
#[derive(Clone, Debug)]
pub struct SelectionContext {
    sample: Vec<Candidate>,
    pilot: Vec<usize>,
    pilot_truth: NeighborSet,
    calibration: Calibration,
}

impl SelectionContext {
    /// `pilot_labels` holds `(id, is oracle neighbor)` for every pilot member;
    /// each id must appear in `sample`.
    pub fn new(sample: Vec<Candidate>, pilot_labels: &[(usize, bool)], radius: f64, delta: f64) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::invalid("sample", "empty sample"));
        }
        let lookup: std::collections::HashMap<usize, f64> =
            sample.iter().map(|c| (c.id, c.proxy_dist)).collect();
        let mut labelled = Vec::with_capacity(pilot_labels.len());
        for &(id, is_true) in pilot_labels {
            let d = lookup
                .get(&id)
                .ok_or_else(|| Error::invalid("pilot", format!("id {id} is not in the sample")))?;
            labelled.push((*d, is_true));
        }
        let calibration = Calibration::new(labelled, delta, radius)?;
        if calibration.total_true() == 0 {
            return Err(Error::DegeneratePilot);
        }
        let pilot_truth = NeighborSet::new(
            pilot_labels.iter().filter(|l| l.1).map(|l| l.0),
            Space::Oracle,
            "oracle",
        );
        Ok(SelectionContext {
            sample,
            pilot: pilot_labels.iter().map(|l| l.0).collect(),
            pilot_truth,
            calibration,
        })
    }

    pub fn sample(&self) -> &[Candidate] {
        &self.sample
    }

    pub fn pilot(&self) -> &[usize] {
        &self.pilot
    }

    /// Oracle neighbors within the pilot.
    pub fn pilot_truth(&self) -> &NeighborSet {
        &self.pilot_truth
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    /// Precision, recall and F1 on the pilot of the selection at target `t`.
    pub fn pilot_metrics(&self, t: f64) -> Prf1 {
        self.calibration.labelled_metrics(t)
    }

    /// Applies the target-`t` threshold to the whole sample.
    pub fn select(&self, t: f64, method: &str) -> NeighborSet {
        apply_threshold(&self.sample, self.calibration.choose(t).threshold, method)
    }
}

/// Result of one strategy on a prepared sample.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub set: NeighborSet,
    pub t_star: f64,
    /// Probes (bisection) or rounds (ternary) spent.
    pub iterations: usize,
    pub pilot: Prf1,
}

fn finish(ctx: &SelectionContext, t_star: f64, iterations: usize, method: &str) -> SearchResult {
    SearchResult {
        set: ctx.select(t_star, method),
        t_star,
        iterations,
        pilot: ctx.pilot_metrics(t_star),
    }
}

/// Maximises pilot F1 over the precision target by ternary search.
pub fn sprint_v(ctx: &SelectionContext, omega_v: f64) -> SearchResult {
    let out = ternary_max(0.0, 1.0, omega_v, |t| ctx.pilot_metrics(t).f1);
    finish(ctx, out.t_star, out.iterations, "sprint_v")
}

/// Balances pilot precision and recall by bisection on the target.
pub fn sprint_c(ctx: &SelectionContext, omega_c: f64, max_iters: usize) -> SearchResult {
    let out = balance_search(omega_c, max_iters, |t| ctx.pilot_metrics(t));
    finish(ctx, out.t_star, out.iterations, "sprint_c")
}

/// Balances precision and recall, then maximises F1 within
/// `±TWO_PHASE_WINDOW` of the balanced target.
pub fn two_phase(ctx: &SelectionContext, omega_c: f64, omega_v: f64, max_iters: usize) -> SearchResult {
    let balanced = balance_search(omega_c, max_iters, |t| ctx.pilot_metrics(t));
    let lo = (balanced.t_star - TWO_PHASE_WINDOW).max(0.0);
    let hi = (balanced.t_star + TWO_PHASE_WINDOW).min(1.0);
    let refined = ternary_max(lo, hi, omega_v, |t| ctx.pilot_metrics(t).f1);
    finish(ctx, refined.t_star, balanced.iterations + refined.iterations, "two_phase")
}

pub fn run_method(ctx: &SelectionContext, method: Method, cfg: &SprintConfig) -> SearchResult {
    match method {
        Method::SprintV => sprint_v(ctx, cfg.omega_v),
        Method::SprintC => sprint_c(ctx, cfg.omega_c, cfg.max_iters),
        Method::TwoPhase => two_phase(ctx, cfg.omega_c, cfg.omega_v, cfg.max_iters),
        Method::PqePtFixed(t) => finish(ctx, t, 0, &method.label()),
    }
}

/// A drawn sample and pilot with their embeddings, ready for selection.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub context: SelectionContext,
    /// Sample ids in draw order.
    pub sample_ids: Vec<usize>,
    pub pilot_ids: Vec<usize>,
}

/// Embeds the target with both models, draws `S` and embeds it with the
/// proxy, then draws `S_p ⊂ S` and embeds it with the oracle. All calls are
/// charged to `session`.
pub fn prepare_sample(
    ds: &Dataset,
    query: &QuerySpec,
    cfg: &SprintConfig,
    oracle: &EmbeddingModel,
    proxy: &EmbeddingModel,
    session: &mut EmbeddingSession,
) -> Result<PreparedSample> {
    cfg.validate(ds.len())?;
    let target = query.target_object(ds)?;
    let q_oracle = session.embed(oracle, &target)?;
    let q_proxy = session.embed(proxy, &target)?;

    let sample_ids = draw_sample(ds.len(), cfg.s, cfg.seed)?;
    let mut sample = Vec::with_capacity(sample_ids.len());
    for &id in &sample_ids {
        let emb = session.embed(proxy, &ds.objects()[id])?;
        sample.push(Candidate {
            id,
            proxy_dist: dist(query.metric, &emb, &q_proxy)?,
        });
    }

    let pilot_ids = draw_pilot(&sample_ids, cfg.s_p, cfg.seed)?;
    let mut labels = Vec::with_capacity(pilot_ids.len());
    for &id in &pilot_ids {
        let emb = session.embed(oracle, &ds.objects()[id])?;
        labels.push((id, dist(query.metric, &emb, &q_oracle)? <= query.radius));
    }

    let context = SelectionContext::new(sample, &labels, query.radius, cfg.delta())?;
    Ok(PreparedSample {
        context,
        sample_ids,
        pilot_ids,
    })
}

/// The selected neighbors together with the sample they were drawn from.
#[derive(Clone, Debug)]
pub struct Selection {
    pub set: NeighborSet,
    pub method: Method,
    pub t_star: f64,
    pub iterations: usize,
    pub pilot_metrics: Prf1,
    pub sample_ids: Vec<usize>,
    pub pilot_ids: Vec<usize>,
    pub calls: LedgerCounts,
}

impl Selection {
    pub fn sample_size(&self) -> usize {
        self.sample_ids.len()
    }

    /// Aggregates the selected neighbors' attribute values, scaled to the
    /// population where the aggregate needs it.
    pub fn estimate(&self, ds: &Dataset, agg: Aggregation) -> Result<f64> {
        let values: Vec<f64> = self.set.members.iter().map(|&id| ds.objects()[id].attr).collect();
        aggregate(agg, &values, &AggregationContext::sample(self.sample_size(), ds.len()))
    }

    pub fn sample_set(&self) -> BTreeSet<usize> {
        self.sample_ids.iter().copied().collect()
    }
}

/// Runs `method` end to end with a fresh embedding session.
pub fn select_with(
    method: Method,
    query: &QuerySpec,
    cfg: &SprintConfig,
    ds: &Dataset,
    oracle: &EmbeddingModel,
    proxy: &EmbeddingModel,
) -> Result<Selection> {
    let mut session = EmbeddingSession::new();
    let prepared = prepare_sample(ds, query, cfg, oracle, proxy, &mut session)?;
    let res = run_method(&prepared.context, method, cfg);
    Ok(Selection {
        set: res.set,
        method,
        t_star: res.t_star,
        iterations: res.iterations,
        pilot_metrics: res.pilot,
        sample_ids: prepared.sample_ids,
        pilot_ids: prepared.pilot_ids,
        calls: session.counts(),
    })
}

/// Routes by aggregate sensitivity: AVG/VAR to `sprint_v`, PCT/COUNT to
/// `sprint_c`, SUM to `two_phase`.
pub fn select_neighbors(
    query: &QuerySpec,
    cfg: &SprintConfig,
    ds: &Dataset,
    oracle: &EmbeddingModel,
    proxy: &EmbeddingModel,
) -> Result<Selection> {
    select_with(Method::for_aggregation(query.agg), query, cfg, ds, oracle, proxy)
}
