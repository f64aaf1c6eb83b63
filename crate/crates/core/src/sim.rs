//! The cache state machine: residency, byte accounting and miss statistics.
//!
//! [`Cache::process`] handles one request. Misses are admitted unless the
//! object is larger than the whole cache (a bypass); before admission the
//! engine is asked for victims until the object fits. Statistics and engine
//! counters are accumulated only for requests at or after the warmup
//! boundary, but warmup requests still change cache state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Key, Request, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
    pub warmup_requests: u64,
    pub seed: u64,
}

impl CacheConfig {
    pub fn new(capacity_bytes: u64) -> Self {
        Self { capacity_bytes, warmup_requests: 0, seed: 0 }
    }
}

/// Cumulative work counters exposed by an engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounters {
    /// Time-to-next-access estimates consumed by eviction decisions.
    pub predictions: u64,
    /// Labeled samples added to the training set.
    pub training_samples: u64,
    /// Evictions decided without the model.
    pub fallback_evictions: u64,
    /// Completed model retrains.
    pub retrains: u64,
}

impl EngineCounters {
    fn since(&self, base: &EngineCounters) -> EngineCounters {
        EngineCounters {
            predictions: self.predictions - base.predictions,
            training_samples: self.training_samples - base.training_samples,
            fallback_evictions: self.fallback_evictions - base.fallback_evictions,
            retrains: self.retrains - base.retrains,
        }
    }
}

/// Chooses victims and observes the request stream.
///
/// The cache calls, per request: `on_hit` for a hit, or `on_miss`, then
/// `evict` zero or more times, then `on_admit` for a miss that fits.
/// `evict` must return a resident key and forget it.
pub trait EvictionEngine {
    fn name(&self) -> String;
    fn on_hit(&mut self, req: &Request);
    fn on_miss(&mut self, req: &Request);
    fn on_admit(&mut self, req: &Request);
    fn evict(&mut self, now: Tick) -> Key;
    fn counters(&self) -> EngineCounters;
    /// Called when a missed object is larger than the cache.
    fn on_bypass(&mut self, _req: &Request) {}
}

impl<E: EvictionEngine + ?Sized> EvictionEngine for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn on_hit(&mut self, req: &Request) {
        (**self).on_hit(req)
    }
    fn on_miss(&mut self, req: &Request) {
        (**self).on_miss(req)
    }
    fn on_admit(&mut self, req: &Request) {
        (**self).on_admit(req)
    }
    fn evict(&mut self, now: Tick) -> Key {
        (**self).evict(now)
    }
    fn counters(&self) -> EngineCounters {
        (**self).counters()
    }
    fn on_bypass(&mut self, req: &Request) {
        (**self).on_bypass(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Hit,
    Miss,
    Bypass,
}

/// One eviction, in the order it happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionEvent {
    pub time: Tick,
    pub key: Key,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Totals {
    requests: u64,
    bytes: u64,
    misses: u64,
    missed_bytes: u64,
    evictions: u64,
    bypasses: u64,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Post-warmup metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub engine: String,
    pub capacity_bytes: u64,
    pub requests: u64,
    pub byte_miss_ratio: f64,
    pub object_miss_ratio: f64,
    pub evictions: u64,
    pub bypasses: u64,
    pub predictions_per_eviction: f64,
    pub training_samples_per_eviction: f64,
    pub fallback_evictions: u64,
    pub retrains: u64,
    pub no_samples: bool,
}

impl SimReport {
    pub const CSV_COLUMNS: [&'static str; 13] = [
        "schema_version",
        "engine",
        "capacity_bytes",
        "requests",
        "byte_miss_ratio",
        "object_miss_ratio",
        "evictions",
        "bypasses",
        "predictions_per_eviction",
        "training_samples_per_eviction",
        "fallback_evictions",
        "retrains",
        "no_samples",
    ];

    pub fn csv_header() -> String {
        Self::CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.schema_version,
            self.engine,
            self.capacity_bytes,
            self.requests,
            self.byte_miss_ratio,
            self.object_miss_ratio,
            self.evictions,
            self.bypasses,
            self.predictions_per_eviction,
            self.training_samples_per_eviction,
            self.fallback_evictions,
            self.retrains,
            self.no_samples,
        )
    }
}

/// Resident set and statistics of a simulated cache.
#[derive(Debug)]
pub struct Cache {
    config: CacheConfig,
    residents: HashMap<Key, u64>,
    used_bytes: u64,
    totals: Totals,
    counters_at_warmup: Option<EngineCounters>,
    log: Option<Vec<EvictionEvent>>,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            config,
            residents: HashMap::new(),
            used_bytes: 0,
            totals: Totals::default(),
            counters_at_warmup: None,
            log: None,
        }
    }

    /// Records every eviction (including warmup ones) for later analysis.
    pub fn with_eviction_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn contains(&self, key: Key) -> bool {
        self.residents.contains_key(&key)
    }

    pub fn resident_count(&self) -> usize {
        self.residents.len()
    }

    pub fn eviction_log(&self) -> Option<&[EvictionEvent]> {
        self.log.as_deref()
    }

    pub fn take_eviction_log(&mut self) -> Option<Vec<EvictionEvent>> {
        self.log.take()
    }

    pub fn process<E: EvictionEngine + ?Sized>(&mut self, req: &Request, engine: &mut E) -> Access {
        let measured = req.time >= self.config.warmup_requests;
        if measured && self.counters_at_warmup.is_none() {
            self.counters_at_warmup = Some(engine.counters());
        }

        // A hit keeps the resident copy's size even if the trace's size drifted.
        let access = if self.residents.contains_key(&req.key) {
            engine.on_hit(req);
            Access::Hit
        } else {
            engine.on_miss(req);
            if req.size > self.config.capacity_bytes {
                engine.on_bypass(req);
                Access::Bypass
            } else {
                while self.used_bytes + req.size > self.config.capacity_bytes {
                    let victim = engine.evict(req.time);
                    let size = self
                        .residents
                        .remove(&victim)
                        .unwrap_or_else(|| panic!("engine {} evicted non-resident key {victim}", engine.name()));
                    self.used_bytes -= size;
                    if measured {
                        self.totals.evictions += 1;
                    }
                    if let Some(log) = &mut self.log {
                        log.push(EvictionEvent { time: req.time, key: victim });
                    }
                }
                self.residents.insert(req.key, req.size);
                self.used_bytes += req.size;
                engine.on_admit(req);
                Access::Miss
            }
        };

        if measured {
            let t = &mut self.totals;
            t.requests += 1;
            t.bytes += req.size;
            if access != Access::Hit {
                t.misses += 1;
                t.missed_bytes += req.size;
            }
            if access == Access::Bypass {
                t.bypasses += 1;
            }
        }
        debug_assert!(self.used_bytes <= self.config.capacity_bytes);
        access
    }

    pub fn report<E: EvictionEngine + ?Sized>(&self, engine: &E) -> SimReport {
        let t = &self.totals;
        let counters = match &self.counters_at_warmup {
            Some(base) => engine.counters().since(base),
            None => EngineCounters::default(),
        };
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        SimReport {
            schema_version: REPORT_SCHEMA_VERSION,
            engine: engine.name(),
            capacity_bytes: self.config.capacity_bytes,
            requests: t.requests,
            byte_miss_ratio: ratio(t.missed_bytes, t.bytes),
            object_miss_ratio: ratio(t.misses, t.requests),
            evictions: t.evictions,
            bypasses: t.bypasses,
            predictions_per_eviction: ratio(counters.predictions, t.evictions),
            training_samples_per_eviction: ratio(counters.training_samples, t.evictions),
            fallback_evictions: counters.fallback_evictions,
            retrains: counters.retrains,
            no_samples: t.requests == 0,
        }
    }
}

/// Replays `requests` through a fresh cache.
pub fn simulate<E: EvictionEngine + ?Sized>(
    config: CacheConfig,
    requests: &[Request],
    engine: &mut E,
    record_evictions: bool,
) -> (SimReport, Option<Vec<EvictionEvent>>) {
    let mut cache = Cache::new(config);
    if record_evictions {
        cache = cache.with_eviction_log();
    }
    for req in requests {
        cache.process(req, engine);
    }
    let report = cache.report(engine);
    (report, cache.take_eviction_log())
}
