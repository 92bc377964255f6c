//! The `keydiff` command line.
//!
//! Machine-readable output (CSV, the FLOP total) goes to stdout or `--out`;
//! progress and summaries go to stderr. Exit codes: 0 success, 1 a
//! verification check found violations, 2 configuration error, 3 I/O or
//! trace-file error, 4 numeric failure.

use std::env;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use keydiff_core::analysis::{
    correlation_report, diversity_report, flop_count_keydiff, overlap, FlopWeights,
};
use keydiff_core::theory::{
    bound_pipeline, verify_lemma1, verify_orthsum, verify_theorem2, FaultInjection, InstanceRanges,
};
use keydiff_core::{
    run_head_stream, synth_trace, Anchor, AttentionModel, HeadReport, Metric, OutlierPlacement,
    Policy, PolicyKind, PolicyParams, SimulationReport, SynthSpec, TokenTrace,
};
use rayon::prelude::*;

use crate::bench::{scaling_bench, BenchError};
use crate::report::{self, Cell, ReportError, Schema};
use crate::traceio::{read_trace_file, write_trace_file, TraceIoError};

/// Environment variable bounding the per-`(layer, head)` worker pool.
pub const WORKERS_ENV: &str = "KEYDIFF_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<keydiff_core::Error> for CliError {
    fn from(e: keydiff_core::Error) -> Self {
        use keydiff_core::Error as E;
        match e {
            E::NonFinite
            | E::FullyMasked { .. }
            | E::UndefinedCorrelation
            | E::Basis { .. }
            | E::Domain(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TraceIoError> for CliError {
    fn from(e: TraceIoError) -> Self {
        match e {
            TraceIoError::Trace(inner) => inner.into(),
            TraceIoError::Range { .. } => CliError::Numeric(e.to_string()),
            TraceIoError::Io(_) | TraceIoError::Parse { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(_) | ReportError::Csv(_) => CliError::Io(e.to_string()),
            ReportError::Schema { .. } => CliError::Numeric(e.to_string()),
            ReportError::UnknownSchema(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Policy(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Synthetic trace parameters as a `key=value,...` list, e.g.
/// `T=64,d=16,outliers=2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthArg {
    pub spec: SynthSpec,
    seed_given: bool,
}

impl FromStr for SynthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = SynthSpec::default();
        let mut seed_given = false;
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, found {item:?}"))?;
            let bad = |_| format!("invalid value {value:?} for {key}");
            match key.trim() {
                "T" | "seq_len" => spec.seq_len = value.parse().map_err(bad)?,
                "d" | "head_dim" => spec.head_dim = value.parse().map_err(bad)?,
                "layers" => spec.layers = value.parse().map_err(bad)?,
                "q_heads" | "qh" => spec.q_heads = value.parse().map_err(bad)?,
                "kv_heads" | "kvh" => spec.kv_heads = value.parse().map_err(bad)?,
                "outliers" => spec.outliers = value.parse().map_err(bad)?,
                "kappa" => {
                    spec.kappa = value
                        .parse()
                        .map_err(|_| format!("invalid kappa {value:?}"))?
                }
                "query_kappa" | "qkappa" => {
                    spec.query_kappa = value
                        .parse()
                        .map_err(|_| format!("invalid query_kappa {value:?}"))?
                }
                "cos" | "key_query_cos" => {
                    spec.key_query_cos = value
                        .parse()
                        .map_err(|_| format!("invalid cos {value:?}"))?
                }
                "logit" | "logit_scale" => {
                    spec.logit_scale = value
                        .parse()
                        .map_err(|_| format!("invalid logit {value:?}"))?
                }
                "placement" => {
                    spec.placement = match value {
                        "leading" => OutlierPlacement::Leading,
                        "random" => OutlierPlacement::Random,
                        _ => {
                            return Err(format!(
                                "placement must be leading or random, found {value:?}"
                            ))
                        }
                    }
                }
                "seed" => {
                    spec.seed = value.parse().map_err(bad)?;
                    seed_given = true;
                }
                other => return Err(format!("unknown synthetic parameter {other:?}")),
            }
        }
        spec.validate().map_err(|e| e.to_string())?;
        Ok(SynthArg { spec, seed_given })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "keydiff",
    version,
    about = "KV-cache eviction simulator and analysis harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream a trace through block prompt processing under one policy.
    Simulate(SimulateArgs),
    /// Compare retained sets and diversity across policies.
    Compare(CompareArgs),
    /// Run the randomized bound checks.
    VerifyTheory(VerifyArgs),
    /// Print the weighted FLOP count of anchor-based KeyDiff scoring.
    Flops(FlopsArgs),
    /// Time policy scoring over growing cache lengths.
    Bench(BenchArgs),
    /// Write a synthetic trace in KVTR format.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// KVTR trace file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Synthetic trace, e.g. `T=64,d=16,outliers=2`.
    #[arg(long)]
    pub synth: Option<SynthArg>,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, default_value = "keydiff")]
    pub policy: PolicyKind,
    #[arg(long, default_value = "mean-raw")]
    pub anchor: Anchor,
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
    #[arg(long, default_value_t = keydiff_core::policies::DEFAULT_WINDOW_FRACTION)]
    pub window_fraction: f64,
    #[arg(long, default_value_t = keydiff_core::policies::DEFAULT_SNAP_KERNEL)]
    pub snap_kernel: usize,
    #[arg(long, default_value_t = keydiff_core::policies::DEFAULT_SNAP_RECENT)]
    pub snap_recent: usize,
    #[arg(long, default_value_t = keydiff_core::policies::DEFAULT_SINK_COUNT)]
    pub sink_count: usize,
}

impl PolicyArgs {
    fn params(&self, seed: u64) -> PolicyParams {
        PolicyParams {
            anchor: self.anchor,
            metric: self.metric,
            window_fraction: self.window_fraction,
            snap_kernel: self.snap_kernel,
            snap_recent: self.snap_recent,
            sink_count: self.sink_count,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Cache budget N.
    #[arg(long)]
    pub budget: usize,
    /// Prompt block size B.
    #[arg(long, default_value_t = 128)]
    pub block: usize,
    /// Seed for synthetic traces (unless given in --synth) and the random policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulation CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-head correlation CSV.
    #[arg(long)]
    pub correlation_out: Option<PathBuf>,
    /// Also write the per-key attention/geometry scatter CSV.
    #[arg(long)]
    pub scatter_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Comma-separated policies, each `name[:key=value...]` with keys
    /// anchor, metric, window, kernel, recent, sink.
    #[arg(long, value_delimiter = ',', required = true)]
    pub policies: Vec<String>,
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 128)]
    pub block: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive synthetic seeds to compare over.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Overlap CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub diversity_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 10_000)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negative control: corrupt every observed quantity.
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub d: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Smallest cache length as a power of two.
    #[arg(long, default_value_t = 10)]
    pub min_exp: u32,
    /// Largest cache length as a power of two.
    #[arg(long, default_value_t = 15)]
    pub max_exp: u32,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub synth: Option<SynthArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::VerifyTheory(a) => cmd_verify_theory(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
    }
}

/// A worker pool sized by [`WORKERS_ENV`], or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = env::var(WORKERS_ENV) {
        let n = raw
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{WORKERS_ENV} must be a positive integer, found {raw:?}"
                ))
            })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// [`keydiff_core::run_block_prompt`] with streams fanned out over `pool`.
/// Heads come back in `(layer, kv_head)` order.
pub fn simulate_parallel(
    pool: &rayon::ThreadPool,
    trace: &TokenTrace,
    model: &AttentionModel,
    policy: &Policy,
    budget: usize,
    block: usize,
) -> keydiff_core::Result<SimulationReport> {
    let streams: Vec<(usize, usize)> = trace.kv_streams().collect();
    let heads = pool.install(|| {
        streams
            .par_iter()
            .map(|&(l, h)| run_head_stream(trace, l, h, model, policy, budget, block, |_, _| {}))
            .collect::<keydiff_core::Result<Vec<HeadReport>>>()
    })?;
    Ok(SimulationReport {
        budget,
        block_size: block,
        heads,
    })
}

fn load_trace(source: &SourceArgs, seed: u64) -> Result<TokenTrace, CliError> {
    match (&source.trace, &source.synth) {
        (Some(path), _) => Ok(read_trace_file(path)?),
        (None, Some(arg)) => {
            let mut spec = arg.spec;
            if !arg.seed_given {
                spec.seed = seed;
            }
            Ok(synth_trace(&spec)?)
        }
        (None, None) => Err(CliError::Config(
            "either --trace or --synth is required".into(),
        )),
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_csv(schema: Schema, rows: &[Vec<Cell>], path: &Option<PathBuf>) -> Result<(), CliError> {
    report::write_report_csv(schema, rows, open_out(path)?)?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let trace = load_trace(&a.source, a.seed)?;
    let model = AttentionModel::for_trace(&trace)?;
    let policy = Policy::build(a.policy.policy, &a.policy.params(a.seed))?;
    if a.budget == 0 || a.block == 0 {
        return Err(CliError::Config(
            "--budget and --block must be at least 1".into(),
        ));
    }
    policy.validate_budget(a.budget)?;
    let pool = worker_pool()?;
    let sim = simulate_parallel(&pool, &trace, &model, &policy, a.budget, a.block)?;
    write_csv(Schema::Simulation, &report::simulation_rows(&sim), &a.out)?;
    eprintln!(
        "simulated {} stream(s) of {} tokens with {} (N={}, B={}); max retained {}",
        sim.heads.len(),
        trace.seq_len(),
        policy.kind().name(),
        a.budget,
        a.block,
        sim.max_retained()
    );
    if a.correlation_out.is_some() {
        let rows = correlation_report(&trace, &model)?;
        write_csv(
            Schema::Correlation,
            &report::correlation_rows(&rows),
            &a.correlation_out,
        )?;
    }
    if a.scatter_out.is_some() {
        let rows = bound_pipeline(&trace, &model)?;
        write_csv(
            Schema::Scatter,
            &report::scatter_rows(&rows),
            &a.scatter_out,
        )?;
    }
    Ok(())
}

/// A policy entry of `compare --policies`: `name[:key=value...]`.
fn parse_policy_entry(entry: &str, seed: u64) -> Result<Policy, CliError> {
    let mut parts = entry.split(':');
    let kind: PolicyKind = parts
        .next()
        .unwrap_or_default()
        .parse()
        .map_err(|e| CliError::Config(format!("{entry}: {e}")))?;
    let mut p = PolicyParams {
        seed,
        ..PolicyParams::default()
    };
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{entry}: expected key=value, found {kv:?}"))
        })?;
        let bad = || CliError::Config(format!("{entry}: invalid value {v:?} for {k}"));
        match k {
            "anchor" => p.anchor = v.parse().map_err(|_| bad())?,
            "metric" => p.metric = v.parse().map_err(|_| bad())?,
            "window" => p.window_fraction = v.parse().map_err(|_| bad())?,
            "kernel" => p.snap_kernel = v.parse().map_err(|_| bad())?,
            "recent" => p.snap_recent = v.parse().map_err(|_| bad())?,
            "sink" => p.sink_count = v.parse().map_err(|_| bad())?,
            _ => {
                return Err(CliError::Config(format!(
                    "{entry}: unknown policy option {k:?}"
                )))
            }
        }
    }
    Ok(Policy::build(kind, &p)?)
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    if a.source.trace.is_some() && a.seeds != 1 {
        return Err(CliError::Config(
            "--seeds applies to synthetic traces only".into(),
        ));
    }
    if a.budget == 0 || a.block == 0 {
        return Err(CliError::Config(
            "--budget and --block must be at least 1".into(),
        ));
    }
    let pool = worker_pool()?;
    let mut overlap_rows = Vec::new();
    let mut diversity_rows = Vec::new();
    let mut agreement: Vec<(String, String, f64, usize)> = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let trace = load_trace(&a.source, seed)?;
        let model = AttentionModel::for_trace(&trace)?;
        let mut runs = Vec::with_capacity(a.policies.len());
        for entry in &a.policies {
            let policy = parse_policy_entry(entry, seed)?;
            policy.validate_budget(a.budget)?;
            runs.push(simulate_parallel(
                &pool, &trace, &model, &policy, a.budget, a.block,
            )?);
        }
        for (name, run) in a.policies.iter().zip(&runs) {
            for head in &run.heads {
                let before = trace.keys(head.layer, head.kv_head);
                let d = diversity_report(before, head.final_cache.keys())?;
                diversity_rows.push(report::diversity_row(
                    seed,
                    name,
                    head.layer,
                    head.kv_head,
                    &d,
                ));
            }
        }
        for (i, (name_a, run_a)) in a.policies.iter().zip(&runs).enumerate() {
            for (name_b, run_b) in a.policies.iter().zip(&runs).skip(i) {
                let mut total = 0.0;
                for (ha, hb) in run_a.heads.iter().zip(&run_b.heads) {
                    let o = overlap(ha.final_cache.time_ids(), hb.final_cache.time_ids());
                    total += o;
                    overlap_rows.push(vec![
                        Cell::Int(seed),
                        Cell::Text(name_a.clone()),
                        Cell::Text(name_b.clone()),
                        Cell::Int(ha.layer as u64),
                        Cell::Int(ha.kv_head as u64),
                        Cell::Float(o),
                    ]);
                }
                match agreement
                    .iter_mut()
                    .find(|g| &g.0 == name_a && &g.1 == name_b)
                {
                    Some(g) => {
                        g.2 += total;
                        g.3 += run_a.heads.len();
                    }
                    None => {
                        agreement.push((name_a.clone(), name_b.clone(), total, run_a.heads.len()))
                    }
                }
            }
        }
    }
    write_csv(Schema::Overlap, &overlap_rows, &a.out)?;
    if a.diversity_out.is_some() {
        write_csv(Schema::Diversity, &diversity_rows, &a.diversity_out)?;
    }
    let mut summary = String::from("mean retained-set overlap:\n");
    for (x, y, total, count) in agreement {
        let _ = writeln!(summary, "  {x} vs {y}: {:.4}", total / count.max(1) as f64);
    }
    eprint!("{summary}");
    Ok(())
}

fn cmd_verify_theory(a: VerifyArgs) -> Result<(), CliError> {
    let fault = FaultInjection {
        sign_flip: a.inject_sign_flip,
    };
    let ranges = InstanceRanges::default();
    let summaries = if a.instances == 0 {
        Vec::new()
    } else {
        let pool = worker_pool()?;
        let (lemma1, (theorem2, orthsum)) = pool.install(|| {
            rayon::join(
                || verify_lemma1(a.instances, a.seed, &ranges, fault),
                || {
                    rayon::join(
                        || verify_theorem2(a.instances, a.seed.wrapping_add(1), &ranges, fault),
                        || {
                            verify_orthsum(
                                a.instances,
                                a.seed.wrapping_add(2),
                                &[2, 3, 8, 16, 64],
                                fault,
                            )
                        },
                    )
                },
            )
        });
        vec![lemma1, theorem2, orthsum]
    };
    write_csv(Schema::Bounds, &report::bounds_rows(&summaries), &a.out)?;
    let mut violations = 0;
    for s in &summaries {
        eprintln!(
            "{}: {} checked, {} violations, {} skipped, {} rejected, max slack {}",
            s.check,
            s.instances,
            s.violations,
            s.skipped,
            s.rejected,
            s.max_slack.map_or("n/a".into(), |m| format!("{m:.3e}"))
        );
        violations += s.violations;
    }
    if violations > 0 {
        return Err(CliError::Violation(format!(
            "{violations} bound violation(s)"
        )));
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<(), CliError> {
    let r = flop_count_keydiff(a.n, a.d, FlopWeights::default())?;
    eprintln!(
        "n={} d={}: {} mults, {} adds, {} divs, {} sqrts",
        r.n, r.d, r.mults, r.adds, r.divs, r.sqrts
    );
    println!("{}", r.weighted_total);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    if a.min_exp > a.max_exp || a.max_exp > 30 {
        return Err(CliError::Config("need --min-exp <= --max-exp <= 30".into()));
    }
    let policy = Policy::build(a.policy.policy, &a.policy.params(a.seed))?;
    let grid: Vec<usize> = (a.min_exp..=a.max_exp).map(|e| 1usize << e).collect();
    let r = scaling_bench(&policy, &grid, a.d, a.trials, a.seed)?;
    let name = policy.kind().name();
    let rows: Vec<Vec<Cell>> = r
        .points
        .iter()
        .map(|p| {
            vec![
                Cell::Text(name.to_owned()),
                Cell::Int(p.n as u64),
                Cell::Int(a.d as u64),
                Cell::Float(p.median_seconds),
            ]
        })
        .collect();
    write_csv(Schema::Scaling, &rows, &a.out)?;
    match r.slope {
        Some(s) => eprintln!("{name}: log-log slope {s:.3}"),
        None => eprintln!("{name}: slope undefined (need two or more lengths)"),
    }
    Ok(())
}

fn cmd_gen_trace(a: GenTraceArgs) -> Result<(), CliError> {
    let mut spec = a.synth.map_or_else(SynthSpec::default, |s| s.spec);
    if !a.synth.is_some_and(|s| s.seed_given) {
        spec.seed = a.seed;
    }
    let trace = synth_trace(&spec)?;
    write_trace_file(&trace, &a.out)?;
    eprintln!(
        "wrote {} ({} layer(s), {} kv head(s), T={}, d={})",
        a.out.display(),
        spec.layers,
        spec.kv_heads,
        spec.seq_len,
        spec.head_dim
    );
    Ok(())
}
