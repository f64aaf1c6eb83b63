//! Eviction-quality analysis against the offline optimum.
//!
//! Each eviction is annotated with the victim's time to next access (TTA),
//! measured from the eviction. The Belady boundary `T` is the smallest finite
//! TTA among MIN's evictions: anything evicted with a smaller TTA is an
//! eviction MIN would not have made. Engines are scored by how many of their
//! evictions fall below and above `T`, normalized by MIN's eviction count.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::EvictionEvent;
use crate::{Key, Request, Tick};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("MIN evicted nothing; the cache never filled, so there is no boundary")]
    NoEvictions,
    #[error("normalizing count must be ≥ 1")]
    ZeroMinCount,
    #[error("eviction log line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time to next access; `None` means never accessed again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tta(pub Option<Tick>);

impl Tta {
    pub const INFINITE: Tta = Tta(None);

    pub fn finite(t: Tick) -> Self {
        Tta(Some(t))
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_none()
    }

    /// `true` when this TTA is at or beyond `t` (infinite counts as beyond).
    pub fn at_least(&self, t: Tick) -> bool {
        self.0.is_none_or(|v| v >= t)
    }
}

impl fmt::Display for Tta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("inf"),
        }
    }
}

impl FromStr for Tta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" => Ok(Tta::INFINITE),
            v => v.parse().map(Tta::finite).map_err(|_| format!("bad tta {v:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvictionRecord {
    pub key: Key,
    pub evict_time: Tick,
    pub tta: Tta,
}

/// Every request time of every key, for next-access lookups at arbitrary times.
#[derive(Debug, Clone, Default)]
pub struct FutureAccesses {
    times: HashMap<Key, Vec<Tick>>,
}

impl FutureAccesses {
    pub fn build(requests: &[Request]) -> Self {
        let mut times: HashMap<Key, Vec<Tick>> = HashMap::new();
        for r in requests {
            times.entry(r.key).or_default().push(r.time);
        }
        Self { times }
    }

    /// First request of `key` strictly after `t`.
    pub fn next_after(&self, key: Key, t: Tick) -> Option<Tick> {
        let ts = self.times.get(&key)?;
        let i = ts.partition_point(|&x| x <= t);
        ts.get(i).copied()
    }
}

/// Attaches TTAs to an eviction log.
pub fn annotate(log: &[EvictionEvent], future: &FutureAccesses) -> Vec<EvictionRecord> {
    log.iter()
        .map(|e| EvictionRecord {
            key: e.key,
            evict_time: e.time,
            tta: Tta(future.next_after(e.key, e.time).map(|n| n - e.time)),
        })
        .collect()
}

/// Smallest finite TTA among MIN's evictions, or `trace_len` if all are infinite.
pub fn belady_boundary(min_evictions: &[EvictionRecord], trace_len: u64) -> Result<Tick, AnalysisError> {
    if min_evictions.is_empty() {
        return Err(AnalysisError::NoEvictions);
    }
    Ok(min_evictions.iter().filter_map(|r| r.tta.0).min().unwrap_or(trace_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterQuality {
    #[serde(rename = "T")]
    pub t: Tick,
    pub frac_below: f64,
    pub frac_above: f64,
    pub below: u64,
    pub above: u64,
    pub min_count: u64,
}

/// Splits evictions at `t` (TTA ≥ t is "above") and normalizes by `min_count`.
pub fn classify(records: &[EvictionRecord], t: Tick, min_count: u64) -> Result<FilterQuality, AnalysisError> {
    if min_count == 0 {
        return Err(AnalysisError::ZeroMinCount);
    }
    let above = records.iter().filter(|r| r.tta.at_least(t)).count() as u64;
    let below = records.len() as u64 - above;
    Ok(FilterQuality {
        t,
        frac_below: below as f64 / min_count as f64,
        frac_above: above as f64 / min_count as f64,
        below,
        above,
        min_count,
    })
}

/// Counts per log2 bucket: `buckets[b]` holds TTAs in `[2^b, 2^(b+1))`
/// (a TTA of 0 lands in bucket 0).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtaHistogram {
    pub buckets: Vec<u64>,
    pub infinite: u64,
}

impl TtaHistogram {
    pub fn total(&self) -> u64 {
        self.buckets.iter().sum::<u64>() + self.infinite
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bucket,lower,count")?;
        for (b, c) in self.buckets.iter().enumerate() {
            writeln!(out, "{b},{},{c}", 1u64 << b)?;
        }
        writeln!(out, "inf,inf,{}", self.infinite)
    }
}

pub fn tta_histogram(records: &[EvictionRecord]) -> TtaHistogram {
    let mut h = TtaHistogram::default();
    for r in records {
        match r.tta.0 {
            None => h.infinite += 1,
            Some(v) => {
                let b = if v == 0 { 0 } else { v.ilog2() as usize };
                if h.buckets.len() <= b {
                    h.buckets.resize(b + 1, 0);
                }
                h.buckets[b] += 1;
            }
        }
    }
    h
}

pub const EVICTION_LOG_HEADER: &str = "evict_time,key,tta";

pub fn write_eviction_log<W: Write>(mut out: W, records: &[EvictionRecord]) -> std::io::Result<()> {
    writeln!(out, "{EVICTION_LOG_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{}", r.evict_time, r.key, r.tta)?;
    }
    Ok(())
}

pub fn read_eviction_log<R: BufRead>(input: R) -> Result<Vec<EvictionRecord>, AnalysisError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() || (i == 0 && line.trim() == EVICTION_LOG_HEADER) {
            continue;
        }
        let bad = |msg: String| AnalysisError::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        }
        let evict_time = fields[0].trim().parse().map_err(|_| bad("bad evict_time".into()))?;
        let key = fields[1].trim().parse().map_err(|_| bad("bad key".into()))?;
        let tta = fields[2].parse().map_err(bad)?;
        out.push(EvictionRecord { key, evict_time, tta });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tta: Option<Tick>) -> EvictionRecord {
        EvictionRecord { key: 1, evict_time: 0, tta: Tta(tta) }
    }

    #[test]
    fn boundary_examples() {
        let recs = [rec(Some(120)), rec(Some(300)), rec(None)];
        assert_eq!(belady_boundary(&recs, 1000).unwrap(), 120);
        assert_eq!(belady_boundary(&[rec(None), rec(None)], 1000).unwrap(), 1000);
        assert!(matches!(belady_boundary(&[], 10), Err(AnalysisError::NoEvictions)));
    }

    #[test]
    fn classify_splits_at_boundary() {
        let q = classify(&[rec(Some(10)), rec(Some(1_000_000))], 120, 2).unwrap();
        assert_eq!((q.frac_below, q.frac_above), (0.5, 0.5));
        let q = classify(&[rec(Some(120)), rec(None)], 120, 2).unwrap();
        assert_eq!((q.below, q.above), (0, 2));
        assert!(classify(&[], 1, 0).is_err());
    }

    #[test]
    fn histogram_buckets() {
        let h = tta_histogram(&[rec(Some(1))]);
        assert_eq!(h.buckets, vec![1]);
        let h = tta_histogram(&[4, 5, 6, 7].map(|v| rec(Some(v))));
        assert_eq!(h.buckets[2], 4);
        let h = tta_histogram(&[rec(Some(3)), rec(None), rec(Some(1 << 20))]);
        assert_eq!(h.total(), 3);
        assert_eq!(h.infinite, 1);
    }

    #[test]
    fn annotate_measures_from_eviction() {
        let reqs: Vec<_> = [1, 2, 3, 1].iter().enumerate().map(|(t, &k)| Request::new(t as Tick, k, 1)).collect();
        let f = FutureAccesses::build(&reqs);
        let log = [EvictionEvent { time: 2, key: 1 }, EvictionEvent { time: 2, key: 2 }];
        let recs = annotate(&log, &f);
        assert_eq!(recs[0].tta, Tta::finite(1));
        assert_eq!(recs[1].tta, Tta::INFINITE);
    }

    #[test]
    fn log_round_trip() {
        let recs = vec![
            EvictionRecord { key: 3, evict_time: 7, tta: Tta::finite(12) },
            EvictionRecord { key: 9, evict_time: 8, tta: Tta::INFINITE },
        ];
        let mut buf = Vec::new();
        write_eviction_log(&mut buf, &recs).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("8,9,inf"));
        assert_eq!(read_eviction_log(&buf[..]).unwrap(), recs);
        assert!(read_eviction_log("1,2\n".as_bytes()).is_err());
    }
}
