//! Request streams: the three-column text trace format and a seeded Zipf
//! workload generator.
//!
//! A trace line is `timestamp key size` in ASCII decimal. Blank lines and
//! lines starting with `#` are skipped. The file's timestamp column is kept
//! for provenance only; every request's logical time is its index in the
//! stream.

use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Stream};
use crate::{Key, Tick};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("{msg} at line {line}")]
    Parse { line: usize, msg: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// One request of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    pub time: Tick,
    pub key: Key,
    pub size: u64,
}

impl Request {
    pub fn new(time: Tick, key: Key, size: u64) -> Self {
        Self { time, key, size }
    }
}

/// Parses a three-column trace. Logical times are assigned 0, 1, 2, ... in
/// file order.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<Request>, TraceError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next_field = |name: &str| -> Result<u64, TraceError> {
            let raw = fields
                .next()
                .ok_or_else(|| TraceError::Parse { line: line_no, msg: format!("missing {name} field") })?;
            raw.parse::<u64>()
                .map_err(|_| TraceError::Parse { line: line_no, msg: format!("non-numeric {name} field {raw:?}") })
        };
        let _timestamp = next_field("timestamp")?;
        let key = next_field("key")?;
        let size = next_field("size")?;
        if fields.next().is_some() {
            return Err(TraceError::Parse { line: line_no, msg: "expected exactly three fields".into() });
        }
        if size == 0 {
            return Err(TraceError::Parse { line: line_no, msg: "size must be ≥ 1".into() });
        }
        out.push(Request::new(out.len() as Tick, key, size));
    }
    Ok(out)
}

/// Writes requests in the three-column format, using logical time as the
/// timestamp column.
pub fn write_trace<W: Write>(mut writer: W, requests: &[Request]) -> io::Result<()> {
    for r in requests {
        writeln!(writer, "{} {} {}", r.time, r.key, r.size)?;
    }
    writer.flush()
}

/// Per-key object size distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    Fixed { bytes: u64 },
    LogNormal { mu: f64, sigma: f64 },
}

/// Parameters of a synthetic Zipf workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub universe: u64,
    pub alpha: f64,
    pub requests: u64,
    pub size_dist: SizeDist,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TraceError::InvalidSpec(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.universe == 0 {
            return Err(TraceError::InvalidSpec("universe must be ≥ 1".into()));
        }
        if self.requests == 0 {
            return Err(TraceError::InvalidSpec("requests must be ≥ 1".into()));
        }
        match self.size_dist {
            SizeDist::Fixed { bytes: 0 } => Err(TraceError::InvalidSpec("fixed size must be ≥ 1".into())),
            SizeDist::LogNormal { sigma, mu } if !(sigma >= 0.0 && mu.is_finite()) => {
                Err(TraceError::InvalidSpec("lognormal needs finite mu and sigma ≥ 0".into()))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for SyntheticSpec {
    type Err = TraceError;

    /// `zipf:n=1000,alpha=1.0,req=200000[,size=100|size=lognormal:MU:SIGMA][,seed=S]`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: String| TraceError::InvalidSpec(m);
        let body = s.strip_prefix("zipf:").ok_or_else(|| bad(format!("expected `zipf:` prefix in {s:?}")))?;
        let mut spec =
            SyntheticSpec { universe: 0, alpha: 0.0, requests: 0, size_dist: SizeDist::Fixed { bytes: 1 }, seed: 0 };
        let (mut have_n, mut have_alpha, mut have_req) = (false, false, false);
        for part in body.split(',').filter(|p| !p.is_empty()) {
            let (name, value) =
                part.split_once('=').ok_or_else(|| bad(format!("expected name=value, got {part:?}")))?;
            let num_err = |_| bad(format!("bad value for {name}: {value:?}"));
            match name.trim() {
                "n" => {
                    spec.universe = value.parse().map_err(num_err)?;
                    have_n = true;
                }
                "alpha" => {
                    spec.alpha = value.parse().map_err(|_| bad(format!("bad alpha {value:?}")))?;
                    have_alpha = true;
                }
                "req" => {
                    spec.requests = value.parse().map_err(num_err)?;
                    have_req = true;
                }
                "seed" => spec.seed = value.parse().map_err(num_err)?,
                "size" => spec.size_dist = parse_size_dist(value)?,
                other => return Err(bad(format!("unknown synthetic parameter {other:?}"))),
            }
        }
        if !(have_n && have_alpha && have_req) {
            return Err(bad("n, alpha and req are required".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_size_dist(value: &str) -> Result<SizeDist, TraceError> {
    let bad = || TraceError::InvalidSpec(format!("bad size distribution {value:?}"));
    if let Some(rest) = value.strip_prefix("lognormal:") {
        let (mu, sigma) = rest.split_once(':').ok_or_else(bad)?;
        Ok(SizeDist::LogNormal { mu: mu.parse().map_err(|_| bad())?, sigma: sigma.parse().map_err(|_| bad())? })
    } else {
        let bytes = value.strip_prefix("fixed:").unwrap_or(value);
        Ok(SizeDist::Fixed { bytes: bytes.parse().map_err(|_| bad())? })
    }
}

/// Cumulative Zipf table over ranks 1..=n; `cdf[i]` is P(rank ≤ i + 1).
pub fn zipf_cdf(n: u64, alpha: f64) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(n as usize);
    let mut acc = 0.0;
    for rank in 1..=n {
        acc += (rank as f64).powf(-alpha);
        cdf.push(acc);
    }
    for c in &mut cdf {
        *c /= acc;
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

/// Generates a Zipf request stream. Key `r` is the object of popularity rank
/// `r`; sizes are drawn once per key. The output is a pure function of `spec`.
pub fn generate_zipf(spec: &SyntheticSpec) -> Result<Vec<Request>, TraceError> {
    spec.validate()?;
    let cdf = zipf_cdf(spec.universe, spec.alpha);
    let sizes = key_sizes(spec)?;
    let mut rng = seed::substream(spec.seed, Stream::Trace);
    let out = (0..spec.requests)
        .map(|time| {
            let u: f64 = rng.random();
            let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            Request::new(time, idx as Key + 1, sizes[idx])
        })
        .collect();
    Ok(out)
}

fn key_sizes(spec: &SyntheticSpec) -> Result<Vec<u64>, TraceError> {
    let n = spec.universe as usize;
    match spec.size_dist {
        SizeDist::Fixed { bytes } => Ok(vec![bytes; n]),
        SizeDist::LogNormal { mu, sigma } => {
            let dist = LogNormal::new(mu, sigma).map_err(|e| TraceError::InvalidSpec(format!("lognormal: {e}")))?;
            let mut rng = seed::substream(spec.seed, Stream::TraceSizes);
            Ok((0..n).map(|_| (dist.sample(&mut rng).round() as u64).max(1)).collect())
        }
    }
}

/// Sum of sizes over distinct keys.
pub fn unique_bytes(requests: &[Request]) -> u64 {
    let mut seen = std::collections::HashSet::new();
    requests.iter().filter(|r| seen.insert(r.key)).map(|r| r.size).sum()
}
