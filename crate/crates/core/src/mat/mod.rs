//! The MAT eviction engine: a heuristic nominates candidates from its tail and
//! a learned time-to-next-access model confirms or vetoes each one.
//!
//! Every eviction pulls candidates with `remove_from_tail` until one has an
//! estimated TTA of at least the threshold `T`, or `L` candidates were seen
//! (then the largest estimate loses). Rejected candidates go back through
//! `insert`. `T` is nudged after each eviction so that the number of
//! predictions per eviction settles around `k`.
//!
//! Candidates are tagged when pulled; a tag becomes a training sample when the
//! key is next requested. Once `train_batch` new samples have arrived the
//! model is retrained on the most recent `train_batch` of them. Until the first
//! model exists, or when a stall fires, the raw heuristic tail is evicted.

mod pipeline;
mod threshold;
mod training;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use log::{debug, info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{EdcSchedule, ObjectMeta, PredCache, DEFAULT_EDC_OFFSET};
use crate::gbdt::{GbdtConfig, Model};
use crate::heuristics::{HeuristicError, HeuristicKind, PriorityCache};
use crate::seed::{self, Stream};
use crate::sim::{EngineCounters, EvictionEngine};
use crate::{Key, Request, Tick};

pub use pipeline::PipelinedMatEngine;
pub use threshold::{adjust_threshold, estimate_tta, ThresholdState};
pub use training::{from_target, predict_distance, to_target, Learner, TrainingBuffer, TrainingDump, TrainingSample};

#[derive(Debug, Error)]
pub enum MatError {
    #[error("invalid MAT config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatConfig {
    /// Target predictions per eviction.
    pub k: usize,
    /// Multiplicative threshold step.
    pub delta: f64,
    /// Maximum candidates examined per eviction.
    pub cap_l: usize,
    /// Tail objects predicted ahead of demand.
    pub batch_b: usize,
    /// Samples per retrain; also the size of the sliding training window.
    pub train_batch: usize,
    /// Probability that an eviction cannot use the model.
    pub stall_prob: f64,
    pub censored_labels: bool,
    /// Keep metadata of evicted objects for when they come back.
    pub ghost_meta: bool,
    /// Tags older than this many ticks are never labeled.
    pub label_horizon: u64,
    /// Cached predictions older than this many ticks are recomputed.
    /// `None` uses `train_batch`.
    pub staleness: Option<u64>,
    /// Initial threshold. `None` uses the resident count at the first ML eviction.
    pub t0: Option<f64>,
    pub edc_offset: u32,
    pub gbdt: GbdtConfig,
    pub seed: u64,
}

impl Default for MatConfig {
    fn default() -> Self {
        Self {
            k: 2,
            delta: 1e-4,
            cap_l: 10,
            batch_b: 64,
            train_batch: 65_536,
            stall_prob: 0.0,
            censored_labels: false,
            ghost_meta: false,
            label_horizon: 1 << 22,
            staleness: None,
            t0: None,
            edc_offset: DEFAULT_EDC_OFFSET,
            gbdt: GbdtConfig::default(),
            seed: 0,
        }
    }
}

impl MatConfig {
    pub fn validate(&self) -> Result<(), MatError> {
        let bad = |m: String| Err(MatError::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be ≥ 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.cap_l < self.k {
            return bad(format!("L ({}) must be ≥ k ({})", self.cap_l, self.k));
        }
        if self.batch_b < 1 {
            return bad("batch B must be ≥ 1".into());
        }
        if self.train_batch < 2 {
            return bad("train batch must be ≥ 2".into());
        }
        if !(0.0..=1.0).contains(&self.stall_prob) {
            return bad(format!("stall probability must lie in [0, 1], got {}", self.stall_prob));
        }
        if let Some(t0) = self.t0 {
            if !(t0 > 0.0 && t0.is_finite()) {
                return bad(format!("T0 must be positive, got {t0}"));
            }
        }
        self.gbdt.validate().map_err(|e| MatError::InvalidConfig(e.to_string()))
    }

    pub fn staleness_bound(&self) -> u64 {
        self.staleness.unwrap_or(self.train_batch as u64)
    }
}

/// Diagnostics beyond the report counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatStats {
    /// Model evaluations, including batched ones never consumed.
    pub model_invocations: u64,
    pub ml_evictions: u64,
    /// ML evictions where no candidate reached the threshold.
    pub max_tta_evictions: u64,
    pub stalls: u64,
    pub censored_samples: u64,
}

/// Metadata of recently evicted objects, oldest dropped first.
#[derive(Debug, Default)]
struct Ghosts {
    meta: HashMap<Key, ObjectMeta>,
    order: VecDeque<Key>,
}

impl Ghosts {
    fn put(&mut self, meta: ObjectMeta, bound: usize) {
        let key = meta.key;
        if self.meta.insert(key, meta).is_none() {
            self.order.push_back(key);
        }
        while self.meta.len() > bound.max(1) {
            match self.order.pop_front() {
                Some(old) => {
                    self.meta.remove(&old);
                }
                None => break,
            }
        }
    }

    fn take(&mut self, key: Key) -> Option<ObjectMeta> {
        let meta = self.meta.remove(&key)?;
        if let Some(pos) = self.order.iter().position(|&k| k == key) {
            self.order.remove(pos);
        }
        Some(meta)
    }
}

pub struct MatEngine {
    config: MatConfig,
    label: String,
    policy: Box<dyn PriorityCache>,
    meta: HashMap<Key, ObjectMeta>,
    ghosts: Option<Ghosts>,
    schedule: EdcSchedule,
    threshold: Option<ThresholdState>,
    buffer: TrainingBuffer,
    learner: Learner,
    stall_rng: ChaCha8Rng,
    counters: EngineCounters,
    stats: MatStats,
    dump: Option<TrainingDump>,
    last_r: usize,
    window: (u64, u64),
    r_counts: Vec<u64>,
}

impl MatEngine {
    pub fn new(kind: HeuristicKind, capacity_bytes: u64, config: MatConfig) -> Result<Self, MatError> {
        config.validate()?;
        let policy = kind.build(capacity_bytes)?;
        let gbdt = GbdtConfig { seed: seed::derive_seed(config.seed, Stream::Bagging), ..config.gbdt };
        Ok(Self {
            label: format!("mat-{kind}"),
            policy,
            meta: HashMap::new(),
            ghosts: config.ghost_meta.then(Ghosts::default),
            schedule: EdcSchedule::with_offset(config.edc_offset),
            threshold: config.t0.map(ThresholdState::new),
            buffer: TrainingBuffer::new(config.train_batch, config.label_horizon),
            learner: Learner::new(gbdt),
            stall_rng: seed::substream(config.seed, Stream::Stall),
            counters: EngineCounters::default(),
            stats: MatStats::default(),
            dump: None,
            last_r: 0,
            window: (0, 0),
            r_counts: vec![0; config.cap_l + 1],
            config,
        })
    }

    /// Writes every labeled sample to `dump` as CSV.
    pub fn with_training_dump(mut self, dump: TrainingDump) -> Self {
        self.dump = Some(dump);
        self
    }

    pub fn config(&self) -> &MatConfig {
        &self.config
    }

    pub fn policy(&self) -> &dyn PriorityCache {
        self.policy.as_ref()
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold.map(|s| s.t)
    }

    pub fn stats(&self) -> MatStats {
        MatStats { censored_samples: self.buffer.censored(), ..self.stats }
    }

    pub fn model(&self) -> Option<&Arc<Model>> {
        self.learner.model()
    }

    pub fn model_version(&self) -> u64 {
        self.learner.version()
    }

    /// How many ML evictions consumed exactly `r` predictions, indexed by `r`.
    pub fn r_histogram(&self) -> &[u64] {
        &self.r_counts
    }

    /// Predictions consumed by the most recent eviction.
    pub fn last_predictions(&self) -> usize {
        self.last_r
    }

    pub fn meta(&self, key: Key) -> Option<&ObjectMeta> {
        self.meta.get(&key)
    }

    pub fn training_buffer(&self) -> &TrainingBuffer {
        &self.buffer
    }

    /// Replaces the model, e.g. with one trained offline.
    pub fn install_model(&mut self, model: Arc<Model>) {
        self.learner.install(model);
    }

    fn cache_valid(&self, pc: &PredCache, now: Tick) -> bool {
        pc.model_version == self.learner.version() && now.saturating_sub(pc.issued_at) <= self.config.staleness_bound()
    }

    /// Predicts ahead for up to `batch_b` objects at the heuristic tail that
    /// have no usable cached prediction.
    pub fn batched_predict(&mut self, now: Tick) {
        let Some(model) = self.learner.model().cloned() else { return };
        let version = self.learner.version();
        for key in self.policy.tail_keys(self.config.batch_b) {
            let fresh = match self.meta.get(&key).and_then(|m| m.pred_cache.as_ref()) {
                Some(pc) => self.cache_valid(pc, now),
                None => false,
            };
            if !fresh {
                self.predict_into_cache(&model, key, now, version);
            }
        }
    }

    fn predict_into_cache(&mut self, model: &Model, key: Key, now: Tick, version: u64) -> f64 {
        let meta = self.meta.get_mut(&key).expect("tail key has metadata");
        let fv = meta.build_features(now).expect("resident object has been accessed");
        let distance = predict_distance(model, &fv);
        meta.pred_cache = Some(PredCache { distance, issued_at: now, model_version: version });
        self.stats.model_invocations += 1;
        distance
    }

    /// TTA estimate of a candidate, from the cache when still valid.
    fn candidate_tta(&mut self, model: &Model, key: Key, now: Tick) -> f64 {
        let version = self.learner.version();
        let cached = self.meta[&key].pred_cache.filter(|pc| self.cache_valid(pc, now));
        let distance = match cached {
            Some(pc) => pc.distance,
            None => self.predict_into_cache(model, key, now, version),
        };
        let age = self.meta[&key].age(now).expect("resident object has been accessed");
        self.counters.predictions += 1;
        estimate_tta(distance, age as f64)
    }

    fn tag(&mut self, key: Key, now: Tick) {
        let meta = self.meta.get(&key).expect("candidate has metadata");
        self.buffer.tag(meta, now).expect("candidate has been accessed");
    }

    fn record_sample(&mut self, sample: Option<TrainingSample>) {
        let Some(sample) = sample else { return };
        self.counters.training_samples += 1;
        if let Some(dump) = &mut self.dump {
            if let Err(e) = dump.write(&sample) {
                warn!("training dump disabled: {e}");
                self.dump = None;
            }
        }
    }

    fn label(&mut self, key: Key, now: Tick) {
        let sample = self.buffer.label_on_access(key, now);
        self.record_sample(sample);
        if now > 0 && now.is_multiple_of(1 << 16) {
            self.buffer.expire(now);
        }
        if self.buffer.retrain_due() {
            self.retrain(now);
        }
    }

    fn retrain(&mut self, now: Tick) {
        let data = self.buffer.take_dataset();
        match self.learner.retrain(&data) {
            Ok(()) => {
                self.counters.retrains += 1;
                info!("{}: retrain {} at t={now} on {} samples", self.label, self.counters.retrains, data.len());
            }
            Err(e) => warn!("{}: retrain at t={now} failed: {e}", self.label),
        }
    }

    fn forget(&mut self, victim: Key, now: Tick) {
        self.policy.delete(victim).expect("victim is detached");
        let meta = self.meta.remove(&victim).expect("victim has metadata");
        if self.config.censored_labels {
            let sample = self.buffer.censor_on_evict(victim, now);
            self.record_sample(sample);
        }
        if let Some(ghosts) = &mut self.ghosts {
            let bound = self.policy.len();
            ghosts.put(ObjectMeta { tagged: false, pred_cache: None, ..meta }, bound);
        }
    }

    fn stalled(&mut self) -> bool {
        match self.config.stall_prob {
            p if p <= 0.0 => false,
            p if p >= 1.0 => true,
            p => self.stall_rng.random_bool(p),
        }
    }

    fn fallback_evict(&mut self, now: Tick) -> Key {
        let victim = self.policy.remove_from_tail().expect("evict called on an empty cache");
        self.tag(victim, now);
        self.forget(victim, now);
        self.counters.fallback_evictions += 1;
        self.last_r = 0;
        victim
    }

    /// One eviction decision.
    pub fn evict_one(&mut self, now: Tick) -> Key {
        let stalled = self.stalled();
        if stalled {
            self.stats.stalls += 1;
        }
        let model = match self.learner.model() {
            Some(m) if !stalled => m.clone(),
            _ => return self.fallback_evict(now),
        };
        let t = self.threshold.get_or_insert_with(|| {
            let t0 = self.policy.len().max(1) as f64;
            debug!("threshold initialised to {t0}");
            ThresholdState::new(t0)
        });
        let t = t.t;

        self.batched_predict(now);
        let mut rejected: Vec<(Key, f64)> = Vec::with_capacity(self.config.cap_l);
        let mut victim = None;
        let mut r = 0;
        while r < self.config.cap_l {
            let key = match self.policy.remove_from_tail() {
                Ok(key) => key,
                Err(HeuristicError::EmptyQueue) => break,
                Err(e) => panic!("heuristic tail failed: {e}"),
            };
            r += 1;
            self.tag(key, now);
            let tta = self.candidate_tta(&model, key, now);
            if tta >= t {
                victim = Some(key);
                break;
            }
            rejected.push((key, tta));
        }
        let victim = match victim {
            Some(v) => v,
            None => {
                self.stats.max_tta_evictions += 1;
                let mut best = 0;
                for (i, &(_, tta)) in rejected.iter().enumerate() {
                    if tta > rejected[best].1 {
                        best = i;
                    }
                }
                rejected.remove(best).0
            }
        };
        for (key, tta) in rejected {
            self.policy.insert(key, tta, now).expect("rejected candidate is detached");
            if let Some(m) = self.meta.get_mut(&key) {
                m.pred_cache = None;
            }
        }
        self.forget(victim, now);
        if let Some(state) = &mut self.threshold {
            state.update(r, self.config.k, self.config.delta);
        }
        self.stats.ml_evictions += 1;
        self.last_r = r;
        self.r_counts[r] += 1;
        self.window.0 += 1;
        self.window.1 += r as u64;
        if self.window.0 == 50_000 {
            debug!(
                "{}: t={now} T={:.1} mean r over last 50000 ML evictions {:.3}",
                self.label,
                self.threshold().unwrap_or(0.0),
                self.window.1 as f64 / self.window.0 as f64
            );
            debug!("{}: r histogram {:?}", self.label, self.r_counts);
            self.window = (0, 0);
        }
        victim
    }

    pub fn flush_dump(&mut self) {
        if let Some(dump) = &mut self.dump {
            if let Err(e) = dump.flush() {
                warn!("training dump flush failed: {e}");
            }
        }
    }
}

impl EvictionEngine for MatEngine {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn on_hit(&mut self, req: &Request) {
        self.label(req.key, req.time);
        let meta = self.meta.get_mut(&req.key).expect("hit on unknown key");
        meta.on_access(req.time, &self.schedule).expect("requests are time ordered");
        self.policy.touch(req.key, req.time).expect("hit on a key the heuristic does not hold");
    }

    fn on_miss(&mut self, req: &Request) {
        self.label(req.key, req.time);
    }

    fn on_admit(&mut self, req: &Request) {
        let mut meta =
            self.ghosts.as_mut().and_then(|g| g.take(req.key)).unwrap_or_else(|| ObjectMeta::new(req.key, req.size));
        meta.size = req.size;
        meta.on_access(req.time, &self.schedule).expect("requests are time ordered");
        self.meta.insert(req.key, meta);
        self.policy.admit(req.key, req.size, req.time).expect("admitting a key the heuristic already holds");
    }

    fn evict(&mut self, now: Tick) -> Key {
        self.evict_one(now)
    }

    fn counters(&self) -> EngineCounters {
        self.counters
    }
}

impl Drop for MatEngine {
    fn drop(&mut self) {
        self.flush_dump();
    }
}
