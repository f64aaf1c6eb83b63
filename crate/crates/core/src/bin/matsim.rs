use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use matsim::analysis;
use matsim::gbdt::GbdtConfig;
use matsim::heuristics::HeuristicKind;
use matsim::mat::MatConfig;
use matsim::oracle::SamplerConfig;
use matsim::run::{self, CapacitySpec, EngineSpec, RunError, RunSpec, TraceSource, WarmupSpec};
use matsim::trace::{self, SyntheticSpec};

#[derive(Parser)]
#[command(name = "matsim", version, about = "Trace-driven cache simulator with learned eviction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one trace through one engine and print its report.
    Run(RunArgs),
    /// Run several engines and capacities on one trace; one CSV row each.
    Compare(CompareArgs),
    /// Classify evictions of several engines against Belady's boundary.
    Analyze(AnalyzeArgs),
    /// Write a synthetic trace in the three-column text format.
    Generate(GenerateArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// Trace file: `timestamp key size` per line.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Synthetic workload, e.g. `zipf:n=1000,alpha=1.0,req=200000`.
    #[arg(long)]
    synthetic: Option<String>,
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Warmup: request count or N% of the trace.
    #[arg(long, default_value = "0")]
    warmup: WarmupSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base heuristic for `heuristic` and `mat` engines.
    #[arg(long, default_value = "lru")]
    algo: HeuristicKind,
    /// Heuristic parameter `name=value`, e.g. `k=3` for lruk, `a1in=0.25` for 2q.
    #[arg(long = "algo-param")]
    algo_param: Vec<String>,
    #[command(flatten)]
    mat: MatArgs,
    /// Candidates sampled per eviction by the sampled engine.
    #[arg(long = "sample-n", default_value_t = 64)]
    sample_n: usize,
}

#[derive(Args)]
struct MatArgs {
    /// Target predictions per eviction.
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    /// Maximum candidates per eviction.
    #[arg(long = "cap-L", default_value_t = 10)]
    cap_l: usize,
    /// Tail objects predicted ahead of demand.
    #[arg(long = "batch-B", default_value_t = 64)]
    batch_b: usize,
    /// Labeled samples per retrain.
    #[arg(long = "train-batch", default_value_t = 65_536)]
    train_batch: usize,
    #[arg(long = "stall-prob", default_value_t = 0.0)]
    stall_prob: f64,
    /// Emit horizon-capped labels for tagged objects evicted before re-access.
    #[arg(long = "censored-labels")]
    censored_labels: bool,
    /// Keep metadata of evicted objects.
    #[arg(long = "ghost-meta")]
    ghost_meta: bool,
    /// Run prediction and training on background threads (nondeterministic).
    #[arg(long)]
    pipelined: bool,
    /// Worker threads for `--pipelined`.
    #[arg(long, default_value_t = 2, requires = "pipelined")]
    workers: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineKind {
    Heuristic,
    Mat,
    Sampled,
    Belady,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Bytes, or N% of the trace's unique bytes.
    #[arg(long)]
    capacity: CapacitySpec,
    #[arg(long, value_enum, default_value = "heuristic")]
    engine: EngineKind,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write `evict_time,key,tta` for every eviction.
    #[arg(long = "eviction-log")]
    eviction_log: Option<PathBuf>,
    /// Write every labeled training sample as CSV (mat engine).
    #[arg(long = "dump-training")]
    dump_training: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated capacities.
    #[arg(long, value_delimiter = ',', required = true)]
    capacity: Vec<CapacitySpec>,
    /// Comma-separated engines: heuristic names, `mat`, `mat-<heuristic>`, `sampled`, `belady`.
    #[arg(long, value_delimiter = ',', default_value = "lru,mat")]
    engines: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    capacity: CapacitySpec,
    #[arg(long, value_delimiter = ',', default_value = "lru,fifo,lfuda,lruk")]
    engines: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write one TTA histogram CSV per engine into this directory.
    #[arg(long = "histogram-dir")]
    histogram_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    synthetic: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Uses the run seed for synthetic traces that do not pin their own.
fn synthetic(spec: &str, seed: u64) -> Result<SyntheticSpec, Failure> {
    let mut parsed: SyntheticSpec = spec.parse().map_err(|e: trace::TraceError| Failure::Usage(e.to_string()))?;
    if !spec.contains("seed=") {
        parsed.seed = seed;
    }
    Ok(parsed)
}

struct Templates {
    source: TraceSource,
    heuristic: HeuristicKind,
    mat: MatConfig,
    sampler: SamplerConfig,
    workers: Option<usize>,
}

fn templates(c: &CommonArgs) -> Result<Templates, Failure> {
    let source = match (&c.source.trace, &c.source.synthetic) {
        (Some(path), None) => TraceSource::File(path.clone()),
        (None, Some(spec)) => TraceSource::Synthetic(synthetic(spec, c.seed)?),
        _ => return Err(Failure::Usage("give exactly one of --trace or --synthetic".into())),
    };
    let mut heuristic = c.algo;
    for p in &c.algo_param {
        let (name, value) =
            p.split_once('=').ok_or_else(|| Failure::Usage(format!("--algo-param expects name=value, got {p:?}")))?;
        heuristic = heuristic.with_param(name.trim(), value.trim()).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    heuristic.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let m = &c.mat;
    let mat = MatConfig {
        k: m.k,
        delta: m.delta,
        cap_l: m.cap_l,
        batch_b: m.batch_b,
        train_batch: m.train_batch,
        stall_prob: m.stall_prob,
        censored_labels: m.censored_labels,
        ghost_meta: m.ghost_meta,
        seed: c.seed,
        ..MatConfig::default()
    };
    mat.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if c.sample_n == 0 {
        return Err(Failure::Usage("--sample-n must be ≥ 1".into()));
    }
    let sampler = SamplerConfig {
        sample_n: c.sample_n,
        train_batch: m.train_batch,
        gbdt: GbdtConfig::default(),
        seed: c.seed,
        ..SamplerConfig::default()
    };
    let workers = match (m.pipelined, m.workers) {
        (false, _) => None,
        (true, 0) => return Err(Failure::Usage("--workers must be ≥ 1".into())),
        (true, n) => Some(n),
    };
    Ok(Templates { source, heuristic, mat, sampler, workers })
}

fn engine_from_token(token: &str, t: &Templates) -> Result<EngineSpec, Failure> {
    let mut spec = EngineSpec::from_token(token, t.heuristic, t.mat, t.sampler)
        .map_err(|e| Failure::Usage(format!("engine {token:?}: {e}")))?;
    if let EngineSpec::Mat { workers, .. } = &mut spec {
        *workers = t.workers;
    }
    Ok(spec)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let t = templates(&a.common)?;
    let engine = match a.engine {
        EngineKind::Heuristic => EngineSpec::Heuristic(t.heuristic),
        EngineKind::Mat => EngineSpec::Mat { heuristic: t.heuristic, config: t.mat, workers: t.workers },
        EngineKind::Sampled => EngineSpec::Sampled { config: t.sampler, oracle: false },
        EngineKind::Belady => EngineSpec::Belady,
    };
    let spec = RunSpec {
        source: t.source,
        capacity: a.capacity,
        warmup: a.common.warmup,
        seed: a.common.seed,
        engine,
        record_evictions: a.eviction_log.is_some(),
        dump_training: a.dump_training,
    };
    let out = run::run(&spec)?;
    info!("{}: byte miss ratio {:.4}", out.report.engine, out.report.byte_miss_ratio);
    if let (Some(path), Some(records)) = (&a.eviction_log, &out.evictions) {
        let f = File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        analysis::write_eviction_log(BufWriter::new(f), records).map_err(runtime)?;
    }
    let mut w = open_output(a.output.as_deref())?;
    match a.format {
        Format::Json => writeln!(w, "{}", serde_json::to_string(&out.report).map_err(runtime)?),
        Format::Csv => writeln!(w, "{}\n{}", matsim::SimReport::csv_header(), out.report.csv_row()),
    }
    .map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    let t = templates(&a.common)?;
    let engines = a.engines.iter().map(|e| engine_from_token(e, &t)).collect::<Result<Vec<_>, _>>()?;
    let mut specs = Vec::new();
    for &capacity in &a.capacity {
        for engine in &engines {
            let mut s = RunSpec::new(t.source.clone(), capacity, engine.clone());
            s.warmup = a.common.warmup;
            s.seed = a.common.seed;
            specs.push(s);
        }
    }
    let rows = run::compare(&specs)?;
    let mut w = open_output(a.output.as_deref())?;
    run::write_compare_csv(&mut w, &rows).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    if rows.iter().any(|r| r.result.is_err()) {
        return Err(Failure::Runtime("some runs failed; see the status column".into()));
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let t = templates(&a.common)?;
    let engines = a.engines.iter().map(|e| engine_from_token(e, &t)).collect::<Result<Vec<_>, _>>()?;
    let mut base = RunSpec::new(t.source, a.capacity, EngineSpec::Belady);
    base.warmup = a.common.warmup;
    base.seed = a.common.seed;
    let report = run::analyze(&base, &engines)?;
    if let Some(dir) = &a.histogram_dir {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        for e in &report.engines {
            let path = dir.join(format!("{}.csv", e.engine));
            let f = File::create(&path).map_err(|err| Failure::Runtime(format!("{}: {err}", path.display())))?;
            e.histogram.write_csv(BufWriter::new(f)).map_err(runtime)?;
        }
    }
    let mut w = open_output(a.output.as_deref())?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report).map_err(runtime)?).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let spec = synthetic(&a.synthetic, a.seed)?;
    let requests = trace::generate_zipf(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut w = open_output(a.output.as_deref())?;
    trace::write_trace(&mut w, &requests).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAT_LOG", "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
