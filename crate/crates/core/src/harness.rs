//! Experiment runner: repeated trials over several query targets, baselines,
//! metric summaries, parameter sweeps, bound-coverage checks and the
//! hypothesis-testing protocol.
//!
//! Every cell (algorithm × aggregate × query × trial) owns its embedding
//! session and RNG streams, and the report is assembled in cell order, so
//! serial and parallel runs produce identical reports.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::aggregate::{aggregate, relative_error, Aggregation, AggregationContext};
use crate::bounds::{min_sizes, reconcile_sizes, BoundsInput};
use crate::dataset::{generate_synthetic, load_dataset, Dataset, SyntheticGenConfig};
use crate::error::{Error, Result};
use crate::frnn::{dist, exact_frnn, prf1, top_k_baseline, Candidate, Metric, NeighborSet, Prf1, Space};
use crate::models::{speedup, EmbeddingModel, EmbeddingSession, EmbeddingSource, LedgerCounts};
use crate::rng::{derive_seed, rng_for};
use crate::sprint::{draw_sample, select_with, Method, QuerySpec, QueryTarget, SprintConfig};
use crate::stats::{t_test_one_sample, z_test_proportion, Hypothesis, Op};

/// Methods the harness can run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    /// The strategy matched to each aggregate.
    Sprint,
    SprintV,
    SprintC,
    TwoPhase,
    PqePtFixed(f64),
    /// Proxy Top-K with `K = |ON_S|`.
    TopK,
    BruteForce,
}

impl Algorithm {
    fn method(self, agg: Aggregation) -> Option<Method> {
        match self {
            Algorithm::Sprint => Some(Method::for_aggregation(agg)),
            Algorithm::SprintV => Some(Method::SprintV),
            Algorithm::SprintC => Some(Method::SprintC),
            Algorithm::TwoPhase => Some(Method::TwoPhase),
            Algorithm::PqePtFixed(t) => Some(Method::PqePtFixed(t)),
            Algorithm::TopK | Algorithm::BruteForce => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Sprint => f.write_str("sprint"),
            Algorithm::TopK => f.write_str("top_k"),
            Algorithm::BruteForce => f.write_str("brute_force"),
            other => write!(f, "{}", other.method(Aggregation::Avg).expect("selection method")),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sprint" => Ok(Algorithm::Sprint),
            "top_k" => Ok(Algorithm::TopK),
            "brute_force" => Ok(Algorithm::BruteForce),
            other => Ok(match other.parse::<Method>()? {
                Method::SprintV => Algorithm::SprintV,
                Method::SprintC => Algorithm::SprintC,
                Method::TwoPhase => Algorithm::TwoPhase,
                Method::PqePtFixed(t) => Algorithm::PqePtFixed(t),
            }),
        }
    }
}

impl Serialize for Algorithm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    File(PathBuf),
    Synthetic(SyntheticGenConfig),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticGenConfig::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::File(p) => load_dataset(p),
            DatasetSource::Synthetic(cfg) => generate_synthetic(cfg),
        }
    }
}

/// Explicit target ids, or `{"random": n}` for `n` ids drawn uniformly from
/// the dataset without replacement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryTargets {
    Ids(Vec<usize>),
    Random { random: usize },
}

impl Default for QueryTargets {
    fn default() -> Self {
        QueryTargets::Random { random: 10 }
    }
}

impl QueryTargets {
    pub fn resolve(&self, population: usize, seed: u64) -> Result<Vec<usize>> {
        match self {
            QueryTargets::Ids(ids) => {
                if let Some(bad) = ids.iter().find(|&&id| id >= population) {
                    return Err(Error::invalid("queries", format!("id {bad} is not in the dataset")));
                }
                Ok(ids.clone())
            }
            QueryTargets::Random { random } => {
                if *random == 0 || *random > population {
                    return Err(Error::invalid("queries", format!("cannot draw {random} targets from {population}")));
                }
                let mut rng = rng_for(seed, "queries", 0);
                Ok(index::sample(&mut rng, population, *random).into_vec())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub oracle: EmbeddingSource,
    pub proxy: EmbeddingSource,
    /// Oracle cost per call relative to the proxy.
    pub cost_ratio: f64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            oracle: EmbeddingSource::Stored,
            proxy: EmbeddingSource::Stored,
            cost_ratio: 2.0,
        }
    }
}

impl ModelsConfig {
    pub fn oracle_model(&self) -> EmbeddingModel {
        EmbeddingModel {
            cost_weight: self.cost_ratio,
            ..EmbeddingModel::oracle().with_source(self.oracle.clone())
        }
    }

    pub fn proxy_model(&self) -> EmbeddingModel {
        EmbeddingModel::proxy().with_source(self.proxy.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DatasetSize,
    SampleSize,
    PilotSize,
    Radius,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub queries: QueryTargets,
    pub radius: f64,
    pub metric: Metric,
    pub aggs: Vec<Aggregation>,
    pub algorithms: Vec<Algorithm>,
    pub sprint: SprintConfig,
    pub models: ModelsConfig,
    pub trials: usize,
    pub seed: u64,
    pub sweep: Option<Sweep>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            queries: QueryTargets::default(),
            radius: 2.0,
            metric: Metric::Euclidean,
            aggs: vec![Aggregation::Avg],
            algorithms: vec![Algorithm::Sprint],
            sprint: SprintConfig::default(),
            models: ModelsConfig::default(),
            trials: 30,
            seed: 0,
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("radius", format!("{} must be nonnegative", self.radius)));
        }
        if self.aggs.is_empty() {
            return Err(Error::invalid("aggs", "empty aggregate list"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("algorithms", "empty algorithm list"));
        }
        if !(self.models.cost_ratio > 0.0) {
            return Err(Error::invalid("cost_ratio", "must be positive"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() || sweep.grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid("sweep", "grid must be nonempty and strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Execution options that do not change results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: bool,
    /// Record per-cell selection wall time (makes reports non-reproducible).
    pub record_timing: bool,
}

/// Exact neighborhood of one query target over the whole dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub target_id: usize,
    pub neighbors: NeighborSet,
    /// Oracle calls spent, on a ledger separate from any selection run.
    pub oracle_calls: u64,
}

impl GroundTruth {
    pub fn values(&self, ds: &Dataset) -> Vec<f64> {
        self.neighbors.members.iter().map(|&id| ds.objects()[id].attr).collect()
    }

    /// The exact aggregate; degenerate when undefined or zero.
    pub fn value(&self, ds: &Dataset, agg: Aggregation) -> Result<f64> {
        let v = aggregate(agg, &self.values(ds), &AggregationContext::truth(ds.len()))?;
        if v == 0.0 {
            return Err(Error::UndefinedRelativeError);
        }
        Ok(v)
    }

    /// `ON_S`: the true neighbors inside a sample.
    pub fn restrict(&self, sample: &[usize]) -> NeighborSet {
        NeighborSet::new(
            sample.iter().copied().filter(|id| self.neighbors.contains(*id)),
            Space::Oracle,
            "exact_frnn",
        )
    }
}

/// Exact oracle-space search over every object of `ds`.
pub fn ground_truth(ds: &Dataset, query: &QuerySpec, oracle: &EmbeddingModel) -> Result<GroundTruth> {
    let target = query.target_object(ds)?;
    let mut session = EmbeddingSession::new();
    let q = oracle.compute(&target)?;
    let mut embedded = Vec::with_capacity(ds.len());
    for obj in ds.objects() {
        embedded.push((obj.id, session.embed(oracle, obj)?));
    }
    let neighbors = exact_frnn(
        embedded.iter().map(|(id, e)| (*id, &e[..])),
        &q,
        query.radius,
        query.metric,
        Space::Oracle,
    )?;
    Ok(GroundTruth {
        target_id: target.id,
        neighbors,
        oracle_calls: session.ledger().oracle_calls(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub algorithm: String,
    pub agg: Aggregation,
    pub query: usize,
    pub target_id: usize,
    pub trial: usize,
    pub seed: u64,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub estimate: Option<f64>,
    pub truth: Option<f64>,
    pub relative_error: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub pr_gap: Option<f64>,
    pub selected: Option<usize>,
    pub oracle_calls: u64,
    pub proxy_calls: u64,
    pub speedup: Option<f64>,
    pub t_star: Option<f64>,
    /// `|ON_S| / s`.
    pub density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_ms: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    /// Mean and `n − 1` standard deviation (0 for fewer than two values).
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return MeanSd::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanSd { mean, sd, n: v.len() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub agg: Aggregation,
    pub cells: usize,
    pub degenerate: usize,
    pub relative_error: MeanSd,
    pub f1: MeanSd,
    pub pr_gap: MeanSd,
    pub oracle_calls: MeanSd,
    pub proxy_calls: MeanSd,
    pub speedup: MeanSd,
    pub density: MeanSd,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_ms: Option<MeanSd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub query: usize,
    pub target_id: usize,
    pub agg: Aggregation,
    pub value: Option<f64>,
    pub neighbors: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_size: usize,
    pub radius: f64,
    pub trials: usize,
    pub seed: u64,
    /// Oracle calls of one brute-force pass.
    pub brute_force_oracle_calls: u64,
    pub ground_truth: Vec<TruthRecord>,
    pub summaries: Vec<Summary>,
    pub cells: Vec<CellRecord>,
}

impl MetricsReport {
    pub fn summary(&self, algorithm: &str, agg: Aggregation) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm && s.agg == agg)
    }

    pub fn degenerate_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.degenerate).count()
    }

    /// One CSV row per cell.
    pub fn write_cells_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::invalid("csv", e.to_string());
        out.write_record([
            "algorithm", "agg", "query", "target_id", "trial", "seed", "degenerate", "estimate", "truth",
            "relative_error", "precision", "recall", "f1", "pr_gap", "selected", "oracle_calls", "proxy_calls",
            "speedup", "t_star", "density", "selection_ms",
        ])
        .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            out.write_record([
                c.algorithm.clone(),
                c.agg.to_string(),
                c.query.to_string(),
                c.target_id.to_string(),
                c.trial.to_string(),
                c.seed.to_string(),
                c.degenerate.to_string(),
                opt(c.estimate),
                opt(c.truth),
                opt(c.relative_error),
                opt(c.precision),
                opt(c.recall),
                opt(c.f1),
                opt(c.pr_gap),
                c.selected.map(|v| v.to_string()).unwrap_or_default(),
                c.oracle_calls.to_string(),
                c.proxy_calls.to_string(),
                opt(c.speedup),
                opt(c.t_star),
                opt(c.density),
                opt(c.selection_ms),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::invalid("csv", e.to_string()))?;
        Ok(())
    }
}

/// Seed shared by every cell of one `(query, trial)` pair, so algorithms are
/// compared on the same sample and pilot.
pub fn trial_seed(root: u64, query: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(root, "query", query as u64), "trial", trial as u64)
}

struct CellOutcome {
    estimate: f64,
    selected: NeighborSet,
    sample: Vec<usize>,
    calls: LedgerCounts,
    t_star: Option<f64>,
}

/// Proxy Top-K over a fresh sample. `K = |ON_S|` needs oracle labels for the
/// whole sample, which are charged.
fn run_top_k(
    ds: &Dataset,
    query: &QuerySpec,
    cfg: &SprintConfig,
    oracle: &EmbeddingModel,
    proxy: &EmbeddingModel,
) -> Result<(NeighborSet, Vec<usize>, LedgerCounts)> {
    let mut session = EmbeddingSession::new();
    let target = query.target_object(ds)?;
    let q_oracle = session.embed(oracle, &target)?;
    let q_proxy = session.embed(proxy, &target)?;
    let sample = draw_sample(ds.len(), cfg.s, cfg.seed)?;
    let mut candidates = Vec::with_capacity(sample.len());
    let mut k = 0;
    for &id in &sample {
        let obj = &ds.objects()[id];
        let p = session.embed(proxy, obj)?;
        let o = session.embed(oracle, obj)?;
        candidates.push(Candidate {
            id,
            proxy_dist: dist(query.metric, &p, &q_proxy)?,
        });
        if dist(query.metric, &o, &q_oracle)? <= query.radius {
            k += 1;
        }
    }
    let set = if k == 0 {
        NeighborSet::new([], Space::Proxy, "top_k")
    } else {
        top_k_baseline(&candidates, k)?
    };
    Ok((set, sample, session.counts()))
}

fn run_cell(
    ds: &Dataset,
    algorithm: Algorithm,
    query: &QuerySpec,
    truth: &GroundTruth,
    cfg: &SprintConfig,
    models: &ModelsConfig,
) -> Result<CellOutcome> {
    let oracle = models.oracle_model();
    let proxy = models.proxy_model();
    if let Some(method) = algorithm.method(query.agg) {
        let sel = select_with(method, query, cfg, ds, &oracle, &proxy)?;
        let estimate = sel.estimate(ds, query.agg)?;
        return Ok(CellOutcome {
            estimate,
            t_star: Some(sel.t_star),
            calls: sel.calls,
            sample: sel.sample_ids,
            selected: sel.set,
        });
    }
    match algorithm {
        Algorithm::TopK => {
            let (set, sample, calls) = run_top_k(ds, query, cfg, &oracle, &proxy)?;
            let values: Vec<f64> = set.members.iter().map(|&id| ds.objects()[id].attr).collect();
            let estimate = aggregate(query.agg, &values, &AggregationContext::sample(sample.len(), ds.len()))?;
            Ok(CellOutcome {
                estimate,
                selected: set,
                sample,
                calls,
                t_star: None,
            })
        }
        _ => {
            let all: Vec<usize> = (0..ds.len()).collect();
            Ok(CellOutcome {
                estimate: truth.value(ds, query.agg)?,
                selected: truth.neighbors.clone(),
                sample: all,
                calls: LedgerCounts {
                    oracle_calls: truth.oracle_calls,
                    proxy_calls: 0,
                },
                t_star: None,
            })
        }
    }
}

struct CellKey {
    algorithm: Algorithm,
    agg: Aggregation,
    query: usize,
    trial: usize,
}

fn par_map<T: Sync, R: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Runs every cell of `cfg` on an already-loaded dataset.
pub fn run_on_dataset(ds: &Dataset, cfg: &ExperimentConfig, opts: RunOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    let targets = cfg.queries.resolve(ds.len(), cfg.seed)?;
    let oracle = cfg.models.oracle_model();
    let specs: Vec<QuerySpec> = targets
        .iter()
        .map(|&id| QuerySpec::new(QueryTarget::Id(id), cfg.radius, cfg.metric, Aggregation::Avg))
        .collect();
    let truths = par_map(&specs, opts.parallel, |q| ground_truth(ds, q, &oracle))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut ground = Vec::new();
    for (qi, gt) in truths.iter().enumerate() {
        for &agg in &cfg.aggs {
            let value = gt.value(ds, agg);
            if let Err(e) = &value {
                if !e.is_degenerate() {
                    return Err(value.unwrap_err());
                }
            }
            ground.push(TruthRecord {
                query: qi,
                target_id: gt.target_id,
                agg,
                value: value.as_ref().ok().copied(),
                neighbors: gt.neighbors.len(),
                degenerate: value.is_err(),
            });
        }
    }

    let mut keys = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &agg in &cfg.aggs {
            for query in 0..targets.len() {
                for trial in 0..cfg.trials {
                    keys.push(CellKey {
                        algorithm,
                        agg,
                        query,
                        trial,
                    });
                }
            }
        }
    }

    let brute = ds.len() as u64;
    let cells = par_map(&keys, opts.parallel, |k| -> Result<CellRecord> {
        let seed = trial_seed(cfg.seed, k.query, k.trial);
        let spec = QuerySpec {
            agg: k.agg,
            ..specs[k.query].clone()
        };
        let gt = &truths[k.query];
        let sprint = SprintConfig {
            seed,
            ..cfg.sprint.clone()
        };
        let mut rec = CellRecord {
            algorithm: k.algorithm.to_string(),
            agg: k.agg,
            query: k.query,
            target_id: gt.target_id,
            trial: k.trial,
            seed,
            degenerate: false,
            reason: None,
            estimate: None,
            truth: None,
            relative_error: None,
            precision: None,
            recall: None,
            f1: None,
            pr_gap: None,
            selected: None,
            oracle_calls: 0,
            proxy_calls: 0,
            speedup: None,
            t_star: None,
            density: None,
            selection_ms: None,
        };
        let truth = match gt.value(ds, k.agg) {
            Ok(v) => v,
            Err(e) if e.is_degenerate() => {
                rec.degenerate = true;
                rec.reason = Some(format!("ground truth: {e}"));
                return Ok(rec);
            }
            Err(e) => return Err(e),
        };
        rec.truth = Some(truth);
        let started = Instant::now();
        let outcome = run_cell(ds, k.algorithm, &spec, gt, &sprint, &cfg.models);
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let out = match outcome {
            Ok(o) => o,
            Err(e) if e.is_degenerate() => {
                rec.degenerate = true;
                rec.reason = Some(e.to_string());
                return Ok(rec);
            }
            Err(e) => return Err(e),
        };
        let on_s = gt.restrict(&out.sample);
        let m: Prf1 = prf1(&out.selected, &on_s);
        rec.estimate = Some(out.estimate);
        rec.relative_error = Some(relative_error(out.estimate, truth)?);
        rec.precision = Some(m.precision);
        rec.recall = Some(m.recall);
        rec.f1 = Some(m.f1);
        rec.pr_gap = Some(m.gap());
        rec.selected = Some(out.selected.len());
        rec.oracle_calls = out.calls.oracle_calls;
        rec.proxy_calls = out.calls.proxy_calls;
        rec.speedup = Some(speedup(brute, out.calls.oracle_calls, out.calls.proxy_calls, cfg.models.cost_ratio));
        rec.t_star = out.t_star;
        rec.density = Some(on_s.len() as f64 / out.sample.len() as f64);
        if opts.record_timing {
            rec.selection_ms = Some(elapsed);
        }
        Ok(rec)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    if cells.iter().all(|c| c.degenerate) {
        return Err(Error::AllCellsDegenerate);
    }

    let mut summaries = Vec::new();
    for &algorithm in &cfg.algorithms {
        let label = algorithm.to_string();
        for &agg in &cfg.aggs {
            let group: Vec<&CellRecord> = cells.iter().filter(|c| c.algorithm == label && c.agg == agg).collect();
            let ok: Vec<&&CellRecord> = group.iter().filter(|c| !c.degenerate).collect();
            let stat = |f: &dyn Fn(&CellRecord) -> Option<f64>| MeanSd::of(ok.iter().filter_map(|c| f(c)));
            summaries.push(Summary {
                algorithm: label.clone(),
                agg,
                cells: group.len(),
                degenerate: group.len() - ok.len(),
                relative_error: stat(&|c| c.relative_error),
                f1: stat(&|c| c.f1),
                pr_gap: stat(&|c| c.pr_gap),
                oracle_calls: stat(&|c| Some(c.oracle_calls as f64)),
                proxy_calls: stat(&|c| Some(c.proxy_calls as f64)),
                speedup: stat(&|c| c.speedup),
                density: stat(&|c| c.density),
                selection_ms: opts.record_timing.then(|| stat(&|c| c.selection_ms)),
            });
        }
    }

    Ok(MetricsReport {
        dataset_size: ds.len(),
        radius: cfg.radius,
        trials: cfg.trials,
        seed: cfg.seed,
        brute_force_oracle_calls: brute,
        ground_truth: ground,
        summaries,
        cells,
    })
}

/// Loads the configured dataset and runs every cell.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    let ds = cfg.dataset.load()?;
    run_on_dataset(&ds, cfg, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

fn as_size(axis: &'static str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(axis, format!("{v} is not a positive integer")))
    }
}

/// Re-runs the experiment at each grid value of the sweep axis, holding every
/// other setting and seed fixed. A grid point where every cell is degenerate
/// is an error.
pub fn run_sweep(cfg: &ExperimentConfig, opts: RunOptions) -> Result<SweepReport> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::invalid("sweep", "no sweep configured"))?;
    let base = match (sweep.axis, &cfg.dataset) {
        (SweepAxis::DatasetSize, _) => None,
        _ => Some(cfg.dataset.load()?),
    };
    let mut points = Vec::with_capacity(sweep.grid.len());
    for &value in &sweep.grid {
        let mut point = cfg.clone();
        point.sweep = None;
        let report = match sweep.axis {
            SweepAxis::DatasetSize => {
                let DatasetSource::Synthetic(gen) = &cfg.dataset else {
                    return Err(Error::invalid("sweep", "dataset_size sweeps need a synthetic source"));
                };
                let gen = SyntheticGenConfig {
                    n_objects: as_size("dataset_size", value)?,
                    ..gen.clone()
                };
                let ds = generate_synthetic(&gen)?;
                run_on_dataset(&ds, &point, opts)?
            }
            axis => {
                match axis {
                    SweepAxis::SampleSize => point.sprint.s = as_size("sample_size", value)?,
                    SweepAxis::PilotSize => point.sprint.s_p = as_size("pilot_size", value)?,
                    _ => point.radius = value,
                }
                run_on_dataset(base.as_ref().expect("loaded"), &point, opts)?
            }
        };
        points.push(SweepPoint { value, report });
    }
    Ok(SweepReport {
        axis: sweep.axis,
        points,
    })
}

/// Sample and pilot sizes from the closed-form bounds, after reconciliation.
pub fn bounded_sizes(agg: Aggregation, input: &BoundsInput) -> Result<(usize, usize)> {
    let out = reconcile_sizes(min_sizes(agg, input)?);
    Ok((out.s_min as usize, out.s_p_min as usize))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub trials: usize,
    pub covered: usize,
    pub degenerate: usize,
    /// `covered / (trials − degenerate)`.
    pub coverage: f64,
    pub truth: f64,
    pub tolerance: f64,
}

/// Fraction of independent trials whose estimate lies within `tolerance`
/// (`ω_S + ω_NN`) of the exact aggregate.
pub fn coverage_check(
    ds: &Dataset,
    query: &QuerySpec,
    cfg: &SprintConfig,
    models: &ModelsConfig,
    tolerance: f64,
    trials: usize,
    parallel: bool,
) -> Result<CoverageResult> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let oracle = models.oracle_model();
    let proxy = models.proxy_model();
    let truth = ground_truth(ds, query, &oracle)?.value(ds, query.agg)?;
    let idx: Vec<usize> = (0..trials).collect();
    let outcomes = par_map(&idx, parallel, |&trial| -> Result<Option<bool>> {
        let c = SprintConfig {
            seed: trial_seed(cfg.seed, 0, trial),
            ..cfg.clone()
        };
        match crate::sprint::select_neighbors(query, &c, ds, &oracle, &proxy).and_then(|s| s.estimate(ds, query.agg)) {
            Ok(est) => Ok(Some((est - truth).abs() <= tolerance)),
            Err(e) if e.is_degenerate() => Ok(None),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let degenerate = outcomes.iter().filter(|o| o.is_none()).count();
    if degenerate == trials {
        return Err(Error::AllCellsDegenerate);
    }
    let covered = outcomes.iter().filter(|o| **o == Some(true)).count();
    Ok(CoverageResult {
        trials,
        covered,
        degenerate,
        coverage: covered as f64 / (trials - degenerate) as f64,
        truth,
        tolerance,
    })
}

/// `0.5, 0.55, …, 1.5`.
pub fn default_factor_grid() -> Vec<f64> {
    (0..=20).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HtConfig {
    /// AVG (t-test) or PCT (z-test).
    pub agg: Aggregation,
    pub queries: QueryTargets,
    pub radius: f64,
    pub metric: Metric,
    pub sprint: SprintConfig,
    pub models: ModelsConfig,
    /// Hypothesised constants are `factor × exact aggregate`.
    pub factors: Vec<f64>,
    pub ops: Vec<Op>,
    pub trials: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for HtConfig {
    fn default() -> Self {
        HtConfig {
            agg: Aggregation::Avg,
            queries: QueryTargets::default(),
            radius: 2.0,
            metric: Metric::Euclidean,
            sprint: SprintConfig::default(),
            models: ModelsConfig::default(),
            factors: default_factor_grid(),
            ops: vec![Op::Ge, Op::Le],
            trials: 30,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtCell {
    pub query: usize,
    pub factor: f64,
    pub op: Op,
    pub c: f64,
    pub true_reject: bool,
    /// Trials whose estimated decision was defined.
    pub trials: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtReport {
    pub agg: Aggregation,
    pub cells: Vec<HtCell>,
    /// Mean accuracy per factor over queries and operators.
    pub by_factor: Vec<(f64, f64)>,
    pub mean_accuracy: f64,
    /// Cells skipped because a decision was undefined.
    pub skipped: usize,
}

impl HtReport {
    pub fn accuracy_at(&self, factor: f64) -> Option<f64> {
        self.by_factor.iter().find(|(f, _)| (f - factor).abs() < 1e-12).map(|p| p.1)
    }
}

enum Evidence {
    Values(Vec<f64>),
    Proportion(f64, usize),
}

fn decide(ev: &Evidence, h: &Hypothesis) -> Result<bool> {
    Ok(match ev {
        Evidence::Values(v) => t_test_one_sample(v, h)?.reject_null,
        Evidence::Proportion(p, n) => z_test_proportion(*p, *n, h)?.reject_null,
    })
}

/// Agreement between decisions on SPRinT estimates and the same tests applied
/// to the exact neighborhood.
pub fn ht_protocol(ds: &Dataset, cfg: &HtConfig, parallel: bool) -> Result<HtReport> {
    if !matches!(cfg.agg, Aggregation::Avg | Aggregation::Pct) {
        return Err(Error::invalid("agg", "hypothesis tests support AVG and PCT"));
    }
    if cfg.trials == 0 || cfg.factors.is_empty() || cfg.ops.is_empty() {
        return Err(Error::invalid("trials", "trials, factors and ops must be nonempty"));
    }
    let targets = cfg.queries.resolve(ds.len(), cfg.seed)?;
    let oracle = cfg.models.oracle_model();
    let proxy = cfg.models.proxy_model();

    let per_query = par_map(&(0..targets.len()).collect::<Vec<_>>(), parallel, |&qi| -> Result<Vec<Option<HtCell>>> {
        let spec = QuerySpec::new(QueryTarget::Id(targets[qi]), cfg.radius, cfg.metric, cfg.agg);
        let gt = ground_truth(ds, &spec, &oracle)?;
        let truth_value = match gt.value(ds, cfg.agg) {
            Ok(v) => v,
            Err(e) if e.is_degenerate() => return Ok(vec![None; cfg.factors.len() * cfg.ops.len()]),
            Err(e) => return Err(e),
        };
        let truth_ev = match cfg.agg {
            Aggregation::Avg => Evidence::Values(gt.values(ds)),
            _ => Evidence::Proportion(truth_value, ds.len()),
        };
        let mut estimates = Vec::with_capacity(cfg.trials);
        for trial in 0..cfg.trials {
            let sprint = SprintConfig {
                seed: trial_seed(cfg.seed, qi, trial),
                ..cfg.sprint.clone()
            };
            match crate::sprint::select_neighbors(&spec, &sprint, ds, &oracle, &proxy) {
                Ok(sel) => {
                    let values: Vec<f64> = sel.set.members.iter().map(|&id| ds.objects()[id].attr).collect();
                    estimates.push(Some(match cfg.agg {
                        Aggregation::Avg => Evidence::Values(values),
                        _ => Evidence::Proportion(values.len() as f64 / sel.sample_size() as f64, sel.sample_size()),
                    }));
                }
                Err(e) if e.is_degenerate() => estimates.push(None),
                Err(e) => return Err(e),
            }
        }
        let mut cells = Vec::new();
        for &factor in &cfg.factors {
            for &op in &cfg.ops {
                let h = Hypothesis {
                    agg: cfg.agg,
                    op,
                    c: factor * truth_value,
                    alpha: cfg.alpha,
                };
                let Ok(true_reject) = decide(&truth_ev, &h) else {
                    cells.push(None);
                    continue;
                };
                let decided: Vec<bool> = estimates
                    .iter()
                    .flatten()
                    .filter_map(|ev| decide(ev, &h).ok())
                    .collect();
                if decided.is_empty() {
                    cells.push(None);
                    continue;
                }
                let agree = decided.iter().filter(|&&d| d == true_reject).count();
                cells.push(Some(HtCell {
                    query: qi,
                    factor,
                    op,
                    c: h.c,
                    true_reject,
                    trials: decided.len(),
                    accuracy: agree as f64 / decided.len() as f64,
                }));
            }
        }
        Ok(cells)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let all: Vec<Option<HtCell>> = per_query.into_iter().flatten().collect();
    let skipped = all.iter().filter(|c| c.is_none()).count();
    let cells: Vec<HtCell> = all.into_iter().flatten().collect();
    if cells.is_empty() {
        return Err(Error::AllCellsDegenerate);
    }
    let by_factor = cfg
        .factors
        .iter()
        .filter_map(|&f| {
            let m = MeanSd::of(cells.iter().filter(|c| c.factor == f).map(|c| c.accuracy));
            (m.n > 0).then_some((f, m.mean))
        })
        .collect();
    let mean_accuracy = MeanSd::of(cells.iter().map(|c| c.accuracy)).mean;
    Ok(HtReport {
        agg: cfg.agg,
        cells,
        by_factor,
        mean_accuracy,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SyntheticGenConfig {
        SyntheticGenConfig {
            n_objects: 2000,
            embedding_dim: 4,
            n_clusters: 4,
            proxy_noise_sigma: noise,
            seed: 5,
            ..Default::default()
        }
    }

    fn cfg(algorithms: Vec<Algorithm>) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(small(0.0)),
            queries: QueryTargets::Random { random: 3 },
            radius: 2.0,
            aggs: vec![Aggregation::Avg, Aggregation::Pct],
            algorithms,
            sprint: SprintConfig {
                s: 400,
                s_p: 200,
                ..Default::default()
            },
            trials: 4,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn algorithm_labels() {
        for a in ["sprint", "sprint_v", "sprint_c", "two_phase", "pqe_pt_fixed(0.9)", "top_k", "brute_force"] {
            assert_eq!(a.parse::<Algorithm>().unwrap().to_string(), a);
        }
        let json = serde_json::to_string(&Algorithm::PqePtFixed(0.95)).unwrap();
        assert_eq!(json, "\"pqe_pt_fixed(0.95)\"");
        assert!("nope".parse::<Algorithm>().is_err());
    }

    #[test]
    fn brute_force_is_exact() {
        let report = run_experiment(&cfg(vec![Algorithm::BruteForce]), RunOptions::default()).unwrap();
        for c in report.cells.iter().filter(|c| !c.degenerate) {
            assert_eq!(c.relative_error, Some(0.0));
            assert_eq!(c.oracle_calls, 2000);
        }
    }

    #[test]
    fn zero_noise_sprint_has_unit_f1() {
        let report = run_experiment(&cfg(vec![Algorithm::Sprint]), RunOptions::default()).unwrap();
        assert_eq!(report.cells.len(), 2 * 3 * 4);
        for c in report.cells.iter().filter(|c| !c.degenerate) {
            assert_eq!(c.f1, Some(1.0), "{c:?}");
            // The target's own embeddings are shared when it lands in S or S_p.
            assert!((200..=201).contains(&c.oracle_calls));
            assert!((400..=401).contains(&c.proxy_calls));
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let mut c = cfg(vec![Algorithm::Sprint, Algorithm::TopK, Algorithm::PqePtFixed(0.9)]);
        c.dataset = DatasetSource::Synthetic(small(0.3));
        let a = run_experiment(&c, RunOptions::default()).unwrap();
        let b = run_experiment(
            &c,
            RunOptions {
                parallel: true,
                record_timing: false,
            },
        )
        .unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn config_round_trips() {
        let c = cfg(vec![Algorithm::Sprint, Algorithm::PqePtFixed(0.95)]);
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let ids: ExperimentConfig = serde_json::from_str(r#"{"queries": [1, 2], "trials": 2}"#).unwrap();
        assert_eq!(ids.queries, QueryTargets::Ids(vec![1, 2]));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn ground_truth_charges_every_object() {
        let ds = generate_synthetic(&small(0.0)).unwrap();
        let q = QuerySpec::new(QueryTarget::Id(0), 1e9, Metric::Euclidean, Aggregation::Avg);
        let gt = ground_truth(&ds, &q, &EmbeddingModel::oracle()).unwrap();
        assert_eq!(gt.oracle_calls, 2000);
        assert_eq!(gt.neighbors.len(), 2000);
        let mean = ds.attr_values().sum::<f64>() / 2000.0;
        assert!((gt.value(&ds, Aggregation::Avg).unwrap() - mean).abs() < 1e-9);
    }

    #[test]
    fn sweep_grid_must_increase() {
        let mut c = cfg(vec![Algorithm::Sprint]);
        c.sweep = Some(Sweep {
            axis: SweepAxis::Radius,
            grid: vec![2.0, 1.0],
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn radius_sweep_reports_density() {
        let mut c = cfg(vec![Algorithm::Sprint]);
        c.trials = 2;
        c.sweep = Some(Sweep {
            axis: SweepAxis::Radius,
            grid: vec![1.5, 2.5],
        });
        let rep = run_sweep(&c, RunOptions::default()).unwrap();
        assert_eq!(rep.points.len(), 2);
        let d0 = rep.points[0].report.summaries[0].density.mean;
        let d1 = rep.points[1].report.summaries[0].density.mean;
        assert!(d1 >= d0);
    }

    #[test]
    fn generous_tolerance_always_covers() {
        let ds = generate_synthetic(&small(0.0)).unwrap();
        let q = QuerySpec::new(QueryTarget::Id(3), 2.0, Metric::Euclidean, Aggregation::Avg);
        let (a, b) = ds.attribute_bounds();
        let sprint = SprintConfig {
            s: 300,
            s_p: 150,
            ..Default::default()
        };
        let res = coverage_check(&ds, &q, &sprint, &ModelsConfig::default(), b - a, 20, false).unwrap();
        assert_eq!(res.coverage, 1.0);
    }

    #[test]
    fn factor_grid() {
        let g = default_factor_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[10], 1.0);
        assert_eq!(g[20], 1.5);
    }
}
