//! `aqnn`: generate datasets, run aggregation queries, size samples, run
//! experiments and hypothesis tests.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use aqnn_core::bounds::{min_sizes, reconcile_sizes, BoundsInput, BoundsOutput};
use aqnn_core::dataset::{generate_synthetic, load_dataset};
use aqnn_core::harness::{
    default_factor_grid, ground_truth, ht_protocol, run_experiment, run_sweep, ExperimentConfig, HtConfig,
    ModelsConfig, QueryTargets, RunOptions,
};
use aqnn_core::rng::derive_seed;
use aqnn_core::sprint::{select_with, Method};
use aqnn_core::stats::Op;
use aqnn_core::{
    prf1, relative_error, Aggregation, Dataset, EmbeddingSource, Error, Metric, QuerySpec, QueryTarget, Space,
    SprintConfig, SyntheticGenConfig, NeighborSet,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "aqnn", version, about = "Approximate aggregation over nearest neighbors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic JSONL dataset.
    Gen(GenArgs),
    /// Run one aggregation query end to end.
    Query(QueryArgs),
    /// Minimum sample and pilot sizes.
    Bounds(BoundsArgs),
    /// Run an experiment (or sweep) from a JSON config.
    Bench(BenchArgs),
    /// Hypothesis-testing accuracy protocol.
    Ht(HtArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_objects: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long)]
    proxy_noise: Option<f64>,
    /// Extra generator settings as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
    #[arg(long, env = "AQNN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct SelectionArgs {
    #[arg(long, default_value_t = 1000)]
    s: usize,
    #[arg(long, default_value_t = 600)]
    sp: usize,
    #[arg(long, default_value_t = 0.01)]
    omega_v: f64,
    #[arg(long, default_value_t = 0.01)]
    omega_c: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    /// Simulate the proxy as the oracle embedding plus Gaussian noise.
    #[arg(long)]
    proxy_noise: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    cost_ratio: f64,
}

impl SelectionArgs {
    fn sprint(&self, seed: u64) -> SprintConfig {
        SprintConfig {
            s: self.s,
            s_p: self.sp,
            omega_v: self.omega_v,
            omega_c: self.omega_c,
            alpha: self.alpha,
            delta: self.delta,
            max_iters: self.max_iters,
            seed,
        }
    }

    fn models(&self, seed: u64) -> ModelsConfig {
        ModelsConfig {
            proxy: match self.proxy_noise {
                Some(sigma) => EmbeddingSource::Simulated {
                    noise_sigma: sigma,
                    seed: derive_seed(seed, "cli-proxy", 0),
                },
                None => EmbeddingSource::Stored,
            },
            cost_ratio: self.cost_ratio,
            ..ModelsConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    data: PathBuf,
    /// Id of the query target.
    #[arg(long)]
    target: usize,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value = "AVG")]
    agg: Aggregation,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    /// Override the aggregate's default strategy
    /// (sprint_v, sprint_c, two_phase, pqe_pt_fixed(t)).
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    sel: SelectionArgs,
    /// Also compute the exact answer by brute force.
    #[arg(long)]
    truth: bool,
    #[arg(long)]
    json: bool,
    #[arg(long, env = "AQNN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    agg: Aggregation,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long)]
    omega_s: f64,
    #[arg(long, default_value_t = 0.1)]
    omega_nn: f64,
    #[arg(long, default_value_t = 0.0001)]
    omega_c: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// `|D|`.
    #[arg(long, default_value_t = 1)]
    population: usize,
    /// `|ON_S|`, when known.
    #[arg(long)]
    on_s: Option<usize>,
    /// Estimate of `|AVG_S|` (SUM).
    #[arg(long)]
    avg_s: Option<f64>,
    /// Estimate of `|ON_D|` (SUM).
    #[arg(long)]
    on_d: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Per-cell CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long, env = "AQNN_SEED")]
    seed: Option<u64>,
    /// Worker threads for cell-level parallelism.
    #[arg(long)]
    parallel: Option<usize>,
    /// Record selection wall time per cell (reports stop being reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct HtArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "AVG")]
    agg: Aggregation,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    /// Number of random query targets.
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    /// Comma-separated factors; defaults to 0.5..=1.5 in steps of 0.05.
    #[arg(long, value_delimiter = ',')]
    factors: Vec<f64>,
    /// Comma-separated operators among >=, <=, !=.
    #[arg(long, value_delimiter = ',', default_value = ">=,<=")]
    ops: Vec<Op>,
    #[command(flatten)]
    sel: SelectionArgs,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    json: bool,
    #[arg(long, env = "AQNN_SEED", default_value_t = 0)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_degenerate() {
            EXIT_DEGENERATE
        } else {
            match e {
                Error::InvalidInput { .. } | Error::NonPositiveSelectionBudget => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn io_failure(path: &std::path::Path, e: io::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn emit<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(Error::from(e)))?;
    // A closed pipe (`| head`) is not an error worth a panic.
    match writeln!(io::stdout().lock(), "{text}") {
        Err(source) if source.kind() != io::ErrorKind::BrokenPipe => Err(Failure::from(Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })),
        _ => Ok(()),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce(bool) -> T + Send) -> CliResult<T> {
    match threads {
        None | Some(1) => Ok(f(false)),
        Some(0) => Err(usage("--parallel must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| usage(e.to_string()))?;
            Ok(pool.install(|| f(true)))
        }
    }
}

fn gen(args: GenArgs) -> CliResult<()> {
    let mut cfg = SyntheticGenConfig {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(n) = args.n_objects {
        cfg.n_objects = n;
    }
    if let Some(d) = args.embedding_dim {
        cfg.embedding_dim = d;
    }
    if let Some(k) = args.n_clusters {
        cfg.n_clusters = k;
    }
    if let Some(sigma) = args.proxy_noise {
        cfg.proxy_noise_sigma = sigma;
    }
    for kv in &args.settings {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let ds = generate_synthetic(&cfg)?;
    ds.save(&args.out)?;
    eprintln!("wrote {} objects to {}", ds.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct QueryReport {
    agg: Aggregation,
    method: String,
    target: usize,
    radius: f64,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_error: Option<f64>,
    precision: f64,
    recall: f64,
    f1: f64,
    selected: usize,
    sample_neighbors: usize,
    oracle_calls: u64,
    proxy_calls: u64,
    t_star: f64,
    seed: u64,
}

fn query(args: QueryArgs) -> CliResult<()> {
    let ds = load_dataset(&args.data)?;
    let spec = QuerySpec::new(QueryTarget::Id(args.target), args.radius, args.metric, args.agg);
    let models = args.sel.models(args.seed);
    let (oracle, proxy) = (models.oracle_model(), models.proxy_model());
    let method = args.method.unwrap_or_else(|| Method::for_aggregation(args.agg));
    let sel = select_with(method, &spec, &args.sel.sprint(args.seed), &ds, &oracle, &proxy)?;
    let estimate = sel.estimate(&ds, args.agg)?;

    // Quality against the sample's exact neighborhood (evaluation only; not
    // charged to the selection's ledger).
    let target = spec.target_object(&ds)?;
    let q = oracle.compute(&target)?;
    let mut on_s = Vec::new();
    for &id in &sel.sample_ids {
        let e = oracle.compute(&ds.objects()[id])?;
        if aqnn_core::dist(args.metric, &e, &q)? <= args.radius {
            on_s.push(id);
        }
    }
    let on_s = NeighborSet::new(on_s, Space::Oracle, "exact_frnn");
    let m = prf1(&sel.set, &on_s);

    let (truth, re) = if args.truth {
        let t = ground_truth(&ds, &spec, &oracle)?.value(&ds, args.agg)?;
        (Some(t), Some(relative_error(estimate, t)?))
    } else {
        (None, None)
    };
    let report = QueryReport {
        agg: args.agg,
        method: method.label(),
        target: args.target,
        radius: args.radius,
        estimate,
        truth,
        relative_error: re,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        selected: sel.set.len(),
        sample_neighbors: on_s.len(),
        oracle_calls: sel.calls.oracle_calls,
        proxy_calls: sel.calls.proxy_calls,
        t_star: sel.t_star,
        seed: args.seed,
    };
    if args.json {
        return emit(&report);
    }
    println!("{} over r = {} around object {}", report.agg, report.radius, report.target);
    println!("estimate      {}", report.estimate);
    if let (Some(t), Some(re)) = (truth, re) {
        println!("truth         {t}");
        println!("RE            {re:.4}%");
    }
    println!("F1            {:.4} (P {:.4}, R {:.4})", m.f1, m.precision, m.recall);
    println!("method        {} (t* = {:.6})", report.method, report.t_star);
    println!("calls         oracle {}, proxy {}", report.oracle_calls, report.proxy_calls);
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    agg: Aggregation,
    input: BoundsInput,
    raw: BoundsOutput,
    reconciled: BoundsOutput,
}

fn bounds(args: BoundsArgs) -> CliResult<()> {
    let input = BoundsInput {
        alpha: args.alpha,
        rho: args.rho,
        a: args.a,
        b: args.b,
        omega_s: args.omega_s,
        omega_nn: args.omega_nn,
        omega_c: args.omega_c,
        lambda: args.lambda,
        population_size: args.population,
        on_s_size: args.on_s,
        avg_s_abs: args.avg_s,
        on_d_size: args.on_d,
    };
    let raw = min_sizes(args.agg, &input)?;
    let reconciled = reconcile_sizes(raw.clone());
    if args.json {
        return emit(&BoundsReport {
            agg: args.agg,
            input,
            raw,
            reconciled,
        });
    }
    println!("s_min = {}", raw.s_min);
    println!("s_p_min = {}", raw.s_p_min);
    if let Some(w) = raw.omega_nn_implied {
        println!("omega_nn = {w}");
    }
    if reconciled.reconciled {
        println!("reconciled s = {}", reconciled.s_min);
    }
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.config).map_err(|e| io_failure(&args.config, e))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let timing = args.timing;
    let value = with_threads(args.parallel, |parallel| -> CliResult<serde_json::Value> {
        let opts = RunOptions {
            parallel,
            record_timing: timing,
        };
        if cfg.sweep.is_some() {
            let rep = run_sweep(&cfg, opts)?;
            Ok(serde_json::to_value(&rep).map_err(Error::from)?)
        } else {
            let rep = run_experiment(&cfg, opts)?;
            if let Some(path) = &args.csv {
                let f = fs::File::create(path).map_err(|e| io_failure(path, e))?;
                rep.write_cells_csv(f)?;
            }
            Ok(serde_json::to_value(&rep).map_err(Error::from)?)
        }
    })??;
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&value).map_err(Error::from)?;
        fs::write(path, text + "\n").map_err(|e| io_failure(path, e))?;
        return Ok(());
    }
    if args.json {
        return emit(&value);
    }
    // Human summary of a single run.
    if let Some(summaries) = value.get("summaries").and_then(|s| s.as_array()) {
        println!("{:<22} {:<6} {:>10} {:>8} {:>8} {:>9} {:>6}", "algorithm", "agg", "RE%", "F1", "|P-R|", "speedup", "degen");
        for s in summaries {
            let mean = |k: &str| s[k]["mean"].as_f64().unwrap_or(f64::NAN);
            println!(
                "{:<22} {:<6} {:>10.4} {:>8.4} {:>8.4} {:>9.3} {:>6}",
                s["algorithm"].as_str().unwrap_or(""),
                s["agg"].as_str().unwrap_or(""),
                mean("relative_error"),
                mean("f1"),
                mean("pr_gap"),
                mean("speedup"),
                s["degenerate"]
            );
        }
    } else {
        emit(&value)?;
    }
    Ok(())
}

fn ht(args: HtArgs) -> CliResult<()> {
    if !matches!(args.agg, Aggregation::Avg | Aggregation::Pct) {
        return Err(usage("ht supports --agg AVG or PCT"));
    }
    let ds: Dataset = load_dataset(&args.data)?;
    let cfg = HtConfig {
        agg: args.agg,
        queries: QueryTargets::Random { random: args.queries },
        radius: args.radius,
        metric: args.metric,
        sprint: args.sel.sprint(args.seed),
        models: args.sel.models(args.seed),
        factors: if args.factors.is_empty() {
            default_factor_grid()
        } else {
            args.factors.clone()
        },
        ops: args.ops.clone(),
        trials: args.trials,
        alpha: args.sel.alpha,
        seed: args.seed,
    };
    let report = with_threads(args.parallel, |parallel| ht_protocol(&ds, &cfg, parallel))??;
    if args.json {
        return emit(&report);
    }
    println!("{} accuracy by factor", report.agg);
    for (f, acc) in &report.by_factor {
        println!("  {f:.2}  {acc:.4}");
    }
    println!("mean accuracy {:.4} (skipped cells: {})", report.mean_accuracy, report.skipped);
    Ok(())
}

impl From<Failure> for ExitCode {
    fn from(f: Failure) -> Self {
        ExitCode::from(f.code)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Query(a) => query(a),
        Command::Bounds(a) => bounds(a),
        Command::Bench(a) => bench(a),
        Command::Ht(a) => ht(a),
    };
    match result {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message.lines().next().unwrap_or(""));
            f.into()
        }
    }
}
