//! Reproducible run descriptions and the drivers behind the CLI.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, EvictionRecord, FilterQuality, FutureAccesses, TtaHistogram};
use crate::heuristics::{HeuristicEngine, HeuristicError, HeuristicKind};
use crate::mat::{MatConfig, MatEngine, MatError, PipelinedMatEngine, TrainingDump};
use crate::oracle::{BeladyEngine, NextAccessIndex, SampledEngine, SamplerConfig};
use crate::sim::{simulate, CacheConfig, EvictionEngine, SimReport};
use crate::trace::{self, SyntheticSpec, TraceError};
use crate::Request;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid run: {0}")]
    Invalid(String),
}

impl RunError {
    /// Errors caused by the run description rather than by the environment.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            RunError::Invalid(_)
                | RunError::Heuristic(_)
                | RunError::Mat(MatError::InvalidConfig(_))
                | RunError::Trace(TraceError::InvalidSpec(_))
        )
    }
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

impl TraceSource {
    pub fn load(&self) -> Result<Vec<Request>, RunError> {
        match self {
            TraceSource::File(path) => {
                let f = File::open(path).map_err(io_err(path))?;
                Ok(trace::parse_trace(BufReader::new(f))?)
            }
            TraceSource::Synthetic(spec) => Ok(trace::generate_zipf(spec)?),
        }
    }
}

/// Cache size in bytes, or as a percentage of the trace's unique bytes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapacitySpec {
    Bytes(u64),
    PercentOfUnique(f64),
}

impl CapacitySpec {
    pub fn resolve(&self, requests: &[Request]) -> u64 {
        match *self {
            CapacitySpec::Bytes(b) => b,
            CapacitySpec::PercentOfUnique(p) => {
                ((trace::unique_bytes(requests) as f64 * p / 100.0).round() as u64).max(1)
            }
        }
    }
}

impl FromStr for CapacitySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(p) = s.strip_suffix('%') {
            match p.trim().parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(CapacitySpec::PercentOfUnique(v)),
                _ => Err(format!("bad capacity percentage {s:?}")),
            }
        } else {
            match s.parse::<u64>() {
                Ok(b) if b > 0 => Ok(CapacitySpec::Bytes(b)),
                _ => Err(format!("capacity must be a positive byte count or N%, got {s:?}")),
            }
        }
    }
}

impl std::fmt::Display for CapacitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CapacitySpec::Bytes(b) => write!(f, "{b}"),
            CapacitySpec::PercentOfUnique(p) => write!(f, "{p}%"),
        }
    }
}

/// Requests excluded from statistics: a count, or a percentage of the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarmupSpec {
    Requests(u64),
    Percent(f64),
}

impl WarmupSpec {
    pub fn resolve(&self, trace_len: usize) -> u64 {
        match *self {
            WarmupSpec::Requests(n) => n,
            WarmupSpec::Percent(p) => (trace_len as f64 * p / 100.0).round() as u64,
        }
    }
}

impl Default for WarmupSpec {
    fn default() -> Self {
        WarmupSpec::Requests(0)
    }
}

impl FromStr for WarmupSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(p) = s.strip_suffix('%') {
            match p.trim().parse::<f64>() {
                Ok(v) if (0.0..=100.0).contains(&v) => Ok(WarmupSpec::Percent(v)),
                _ => Err(format!("bad warmup percentage {s:?}")),
            }
        } else {
            s.parse().map(WarmupSpec::Requests).map_err(|_| format!("bad warmup {s:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineSpec {
    Heuristic(HeuristicKind),
    Mat {
        heuristic: HeuristicKind,
        config: MatConfig,
        /// Worker threads for the pipelined engine; `None` runs synchronously.
        workers: Option<usize>,
    },
    Sampled {
        config: SamplerConfig,
        oracle: bool,
    },
    Belady,
}

impl EngineSpec {
    /// Parses a compare token: a heuristic name (`lru`), `mat` or `mat-<heuristic>`,
    /// `sampled`, `sampled-oracle` or `belady`. Parameters come from the templates.
    pub fn from_token(
        token: &str,
        heuristic: HeuristicKind,
        mat: MatConfig,
        sampler: SamplerConfig,
    ) -> Result<Self, RunError> {
        let t = token.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "belady" | "min" => EngineSpec::Belady,
            "sampled" => EngineSpec::Sampled { config: sampler, oracle: false },
            "sampled-oracle" => EngineSpec::Sampled { config: sampler, oracle: true },
            "mat" => EngineSpec::Mat { heuristic, config: mat, workers: None },
            "heuristic" => EngineSpec::Heuristic(heuristic),
            _ => match t.strip_prefix("mat-") {
                Some(h) => {
                    EngineSpec::Mat { heuristic: same_params(h.parse()?, heuristic), config: mat, workers: None }
                }
                None => EngineSpec::Heuristic(same_params(t.parse()?, heuristic)),
            },
        })
    }

    fn uses_seed(&mut self, seed: u64) {
        match self {
            EngineSpec::Mat { config, .. } => config.seed = seed,
            EngineSpec::Sampled { config, .. } => config.seed = seed,
            _ => {}
        }
    }
}

/// Keeps the template's parameters when the token names the same policy.
fn same_params(parsed: HeuristicKind, template: HeuristicKind) -> HeuristicKind {
    if std::mem::discriminant(&parsed) == std::mem::discriminant(&template) {
        template
    } else {
        parsed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub source: TraceSource,
    pub capacity: CapacitySpec,
    pub warmup: WarmupSpec,
    pub seed: u64,
    pub engine: EngineSpec,
    pub record_evictions: bool,
    pub dump_training: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(source: TraceSource, capacity: CapacitySpec, engine: EngineSpec) -> Self {
        Self {
            source,
            capacity,
            warmup: WarmupSpec::default(),
            seed: 0,
            engine,
            record_evictions: false,
            dump_training: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: SimReport,
    /// Annotated evictions, when requested.
    pub evictions: Option<Vec<EvictionRecord>>,
}

/// Builds the engine described by `spec` for a cache of `capacity` bytes.
pub fn build_engine(
    engine: &EngineSpec,
    capacity: u64,
    requests: &[Request],
    dump_training: Option<&PathBuf>,
) -> Result<Box<dyn EvictionEngine>, RunError> {
    Ok(match engine {
        EngineSpec::Heuristic(kind) => Box::new(HeuristicEngine::new(*kind, capacity)?),
        EngineSpec::Mat { heuristic, config, workers: None } => {
            let mut e = MatEngine::new(*heuristic, capacity, *config)?;
            if let Some(path) = dump_training {
                let f = File::create(path).map_err(io_err(path))?;
                let dump = TrainingDump::new(Box::new(BufWriter::new(f))).map_err(io_err(path))?;
                e = e.with_training_dump(dump);
            }
            Box::new(e)
        }
        EngineSpec::Mat { heuristic, config, workers: Some(n) } => {
            if dump_training.is_some() {
                return Err(RunError::Invalid("training dumps need the synchronous engine".into()));
            }
            Box::new(PipelinedMatEngine::new(*heuristic, capacity, *config, *n)?)
        }
        EngineSpec::Sampled { config, oracle: false } => {
            if config.sample_n == 0 {
                return Err(RunError::Invalid("sample size must be ≥ 1".into()));
            }
            Box::new(SampledEngine::new(*config))
        }
        EngineSpec::Sampled { config, oracle: true } => {
            Box::new(SampledEngine::with_oracle(*config, Arc::new(NextAccessIndex::build(requests))))
        }
        EngineSpec::Belady => Box::new(BeladyEngine::for_trace(requests)),
    })
}

/// Runs `spec` against an already loaded trace.
pub fn run_on(spec: &RunSpec, requests: &[Request]) -> Result<RunOutput, RunError> {
    if spec.dump_training.is_some() && !matches!(spec.engine, EngineSpec::Mat { .. }) {
        return Err(RunError::Invalid("--dump-training applies to the mat engine only".into()));
    }
    let capacity = spec.capacity.resolve(requests);
    let config =
        CacheConfig { capacity_bytes: capacity, warmup_requests: spec.warmup.resolve(requests.len()), seed: spec.seed };
    let mut engine_spec = spec.engine.clone();
    engine_spec.uses_seed(spec.seed);
    let mut engine = build_engine(&engine_spec, capacity, requests, spec.dump_training.as_ref())?;
    let (report, log) = simulate(config, requests, &mut engine, spec.record_evictions);
    drop(engine);
    let evictions = log.map(|log| analysis::annotate(&log, &FutureAccesses::build(requests)));
    Ok(RunOutput { report, evictions })
}

pub fn run(spec: &RunSpec) -> Result<RunOutput, RunError> {
    let requests = spec.source.load()?;
    run_on(spec, &requests)
}

/// One row of a comparison; failed runs keep their error message.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub capacity: CapacitySpec,
    pub result: Result<SimReport, String>,
}

/// Runs every spec (in parallel) on the trace of the first spec's source.
pub fn compare(specs: &[RunSpec]) -> Result<Vec<CompareRow>, RunError> {
    let Some(first) = specs.first() else { return Ok(Vec::new()) };
    if specs.iter().any(|s| s.source != first.source) {
        return Err(RunError::Invalid("compare needs a single trace source".into()));
    }
    let requests = first.source.load()?;
    Ok(specs
        .par_iter()
        .map(|spec| CompareRow {
            capacity: spec.capacity,
            result: run_on(spec, &requests).map(|o| o.report).map_err(|e| e.to_string()),
        })
        .collect())
}

pub fn write_compare_csv<W: Write>(mut out: W, rows: &[CompareRow]) -> std::io::Result<()> {
    writeln!(out, "capacity,status,{}", SimReport::csv_header())?;
    for row in rows {
        match &row.result {
            Ok(r) => writeln!(out, "{},ok,{}", row.capacity, r.csv_row())?,
            Err(e) => {
                let blanks = ",".repeat(SimReport::CSV_COLUMNS.len() - 1);
                writeln!(out, "{},error: {},{blanks}", row.capacity, e.replace(',', ";"))?
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineQuality {
    pub engine: String,
    pub evictions: u64,
    pub quality: FilterQuality,
    pub histogram: TtaHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    #[serde(rename = "T")]
    pub t: u64,
    pub min_evictions: u64,
    pub engines: Vec<EngineQuality>,
}

/// Runs MIN and each engine on `base`'s trace and capacity, and classifies
/// post-warmup evictions against MIN's boundary.
pub fn analyze(base: &RunSpec, engines: &[EngineSpec]) -> Result<AnalysisReport, RunError> {
    let requests = base.source.load()?;
    let warmup = base.warmup.resolve(requests.len());
    let with_engine = |engine: &EngineSpec| RunSpec {
        engine: engine.clone(),
        record_evictions: true,
        dump_training: None,
        ..base.clone()
    };
    let measured = |out: RunOutput| -> Vec<EvictionRecord> {
        out.evictions.unwrap_or_default().into_iter().filter(|r| r.evict_time >= warmup).collect()
    };
    let min = measured(run_on(&with_engine(&EngineSpec::Belady), &requests)?);
    let t = analysis::belady_boundary(&min, requests.len() as u64)?;
    let min_count = min.len() as u64;

    let mut all = vec![EngineSpec::Belady];
    all.extend(engines.iter().filter(|e| **e != EngineSpec::Belady).cloned());
    let results: Vec<Result<EngineQuality, RunError>> = all
        .par_iter()
        .map(|engine| {
            let out = run_on(&with_engine(engine), &requests)?;
            let name = out.report.engine.clone();
            let records = measured(out);
            Ok(EngineQuality {
                engine: name,
                evictions: records.len() as u64,
                quality: analysis::classify(&records, t, min_count)?,
                histogram: analysis::tta_histogram(&records),
            })
        })
        .collect();
    Ok(AnalysisReport { t, min_evictions: min_count, engines: results.into_iter().collect::<Result<_, _>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SizeDist;

    fn zipf() -> TraceSource {
        TraceSource::Synthetic(SyntheticSpec {
            universe: 500,
            alpha: 1.0,
            requests: 20_000,
            size_dist: SizeDist::Fixed { bytes: 10 },
            seed: 1,
        })
    }

    #[test]
    fn capacity_and_warmup_parse() {
        assert_eq!("100000".parse(), Ok(CapacitySpec::Bytes(100_000)));
        assert_eq!("10%".parse(), Ok(CapacitySpec::PercentOfUnique(10.0)));
        assert!("0".parse::<CapacitySpec>().is_err());
        assert!("x%".parse::<CapacitySpec>().is_err());
        assert_eq!("25%".parse::<WarmupSpec>().unwrap().resolve(1000), 250);
        assert_eq!("7".parse::<WarmupSpec>().unwrap().resolve(1000), 7);
    }

    #[test]
    fn engine_tokens() {
        let (h, m, s) = (HeuristicKind::Lru, MatConfig::default(), SamplerConfig::default());
        assert_eq!(EngineSpec::from_token("lru", h, m, s).unwrap(), EngineSpec::Heuristic(HeuristicKind::Lru));
        assert!(matches!(
            EngineSpec::from_token("mat-fifo", h, m, s).unwrap(),
            EngineSpec::Mat { heuristic: HeuristicKind::Fifo, .. }
        ));
        assert_eq!(EngineSpec::from_token("belady", h, m, s).unwrap(), EngineSpec::Belady);
        assert!(EngineSpec::from_token("nope", h, m, s).is_err());
    }

    #[test]
    fn compare_rows_cover_the_sweep() {
        let caps = ["2%", "5%", "10%"];
        let engines = [EngineSpec::Heuristic(HeuristicKind::Lru), EngineSpec::Belady];
        let specs: Vec<_> = caps
            .iter()
            .flat_map(|c| engines.iter().map(move |e| RunSpec::new(zipf(), c.parse().unwrap(), e.clone())))
            .collect();
        let rows = compare(&specs).unwrap();
        assert_eq!(rows.len(), 6);
        for pair in rows.chunks(2) {
            let lru = pair[0].result.as_ref().unwrap();
            let min = pair[1].result.as_ref().unwrap();
            assert!(min.byte_miss_ratio <= lru.byte_miss_ratio);
        }
        let mut buf = Vec::new();
        write_compare_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn analysis_pins_min_to_all_above() {
        let base = RunSpec::new(zipf(), CapacitySpec::PercentOfUnique(10.0), EngineSpec::Belady);
        let report = analyze(&base, &[EngineSpec::Heuristic(HeuristicKind::Lru)]).unwrap();
        let min = &report.engines[0].quality;
        assert_eq!((min.frac_below, min.frac_above), (0.0, 1.0));
        assert!(report.engines[1].quality.frac_above > 0.0);
    }
}
