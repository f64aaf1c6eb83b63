use std::collections::HashMap;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NextAccessIndex, NEVER};
use crate::features::{EdcSchedule, ObjectMeta, DEFAULT_EDC_OFFSET};
use crate::gbdt::GbdtConfig;
use crate::mat::{estimate_tta, predict_distance, Learner, TrainingBuffer};
use crate::seed::{self, Stream};
use crate::sim::{EngineCounters, EvictionEngine};
use crate::{Key, Request, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub sample_n: usize,
    pub train_batch: usize,
    pub label_horizon: u64,
    pub edc_offset: u32,
    pub gbdt: GbdtConfig,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sample_n: 64,
            train_batch: 65_536,
            label_horizon: 1 << 22,
            edc_offset: DEFAULT_EDC_OFFSET,
            gbdt: GbdtConfig::default(),
            seed: 0,
        }
    }
}

/// Where sampled candidates get their TTA estimates.
pub enum Predictor {
    /// A model trained online from the request stream.
    Learned { buffer: TrainingBuffer, learner: Learner },
    /// The true next access, read from the trace.
    Oracle(Arc<NextAccessIndex>),
}

/// Samples `sample_n` residents uniformly at each eviction and evicts the one
/// with the largest estimated time to next access.
pub struct SampledEngine {
    config: SamplerConfig,
    predictor: Predictor,
    residents: Vec<Key>,
    slot: HashMap<Key, usize>,
    meta: HashMap<Key, ObjectMeta>,
    /// Next request time per resident; oracle mode only.
    next: HashMap<Key, Tick>,
    schedule: EdcSchedule,
    rng: ChaCha8Rng,
    counters: EngineCounters,
}

impl SampledEngine {
    pub fn new(config: SamplerConfig) -> Self {
        let gbdt = GbdtConfig { seed: seed::derive_seed(config.seed, Stream::Bagging), ..config.gbdt };
        let predictor = Predictor::Learned {
            buffer: TrainingBuffer::new(config.train_batch, config.label_horizon),
            learner: Learner::new(gbdt),
        };
        Self::with_predictor(config, predictor)
    }

    /// Uses true next-access distances instead of a model.
    pub fn with_oracle(config: SamplerConfig, index: Arc<NextAccessIndex>) -> Self {
        Self::with_predictor(config, Predictor::Oracle(index))
    }

    fn with_predictor(config: SamplerConfig, predictor: Predictor) -> Self {
        Self {
            predictor,
            residents: Vec::new(),
            slot: HashMap::new(),
            meta: HashMap::new(),
            next: HashMap::new(),
            schedule: EdcSchedule::with_offset(config.edc_offset),
            rng: seed::substream(config.seed, Stream::Sampler),
            counters: EngineCounters::default(),
            config,
        }
    }

    fn access(&mut self, req: &Request) {
        match &mut self.predictor {
            Predictor::Learned { buffer, learner } => {
                if buffer.label_on_access(req.key, req.time).is_some() {
                    self.counters.training_samples += 1;
                }
                if req.time > 0 && req.time.is_multiple_of(1 << 16) {
                    buffer.expire(req.time);
                }
                if buffer.retrain_due() {
                    let data = buffer.take_dataset();
                    match learner.retrain(&data) {
                        Ok(()) => {
                            self.counters.retrains += 1;
                            info!("sampled: retrain {} at t={}", self.counters.retrains, req.time);
                        }
                        Err(e) => warn!("sampled: retrain failed: {e}"),
                    }
                }
            }
            Predictor::Oracle(index) => {
                let n = index.next(req.time).unwrap_or(NEVER);
                self.next.insert(req.key, n);
            }
        }
    }

    fn tag(&mut self, key: Key, now: Tick) {
        if let Predictor::Learned { buffer, .. } = &mut self.predictor {
            buffer.tag(&self.meta[&key], now).expect("resident has been accessed");
        }
    }

    fn remove(&mut self, key: Key) {
        let i = self.slot.remove(&key).expect("victim is resident");
        self.residents.swap_remove(i);
        if let Some(&moved) = self.residents.get(i) {
            self.slot.insert(moved, i);
        }
        self.meta.remove(&key);
        self.next.remove(&key);
    }

    fn tta(&mut self, key: Key, now: Tick) -> Option<f64> {
        match &self.predictor {
            Predictor::Oracle(_) => {
                let n = self.next[&key];
                Some(if n == NEVER { f64::INFINITY } else { (n - now) as f64 })
            }
            Predictor::Learned { learner, .. } => {
                let model = learner.model()?;
                let meta = &self.meta[&key];
                let fv = meta.build_features(now).expect("resident has been accessed");
                Some(estimate_tta(predict_distance(model, &fv), fv.age() as f64))
            }
        }
    }
}

impl EvictionEngine for SampledEngine {
    fn name(&self) -> String {
        match self.predictor {
            Predictor::Learned { .. } => format!("sampled-{}", self.config.sample_n),
            Predictor::Oracle(_) => format!("sampled-{}-oracle", self.config.sample_n),
        }
    }

    fn on_hit(&mut self, req: &Request) {
        self.access(req);
        let meta = self.meta.get_mut(&req.key).expect("hit on unknown key");
        meta.on_access(req.time, &self.schedule).expect("requests are time ordered");
        self.tag(req.key, req.time);
    }

    fn on_miss(&mut self, req: &Request) {
        if let Predictor::Learned { .. } = self.predictor {
            self.access(req);
        }
    }

    fn on_admit(&mut self, req: &Request) {
        if let Predictor::Oracle(_) = self.predictor {
            self.access(req);
        }
        let mut meta = ObjectMeta::new(req.key, req.size);
        meta.on_access(req.time, &self.schedule).expect("requests are time ordered");
        self.meta.insert(req.key, meta);
        self.slot.insert(req.key, self.residents.len());
        self.residents.push(req.key);
        self.tag(req.key, req.time);
    }

    fn evict(&mut self, now: Tick) -> Key {
        let len = self.residents.len();
        assert!(len > 0, "evict called on an empty cache");
        let no_model = matches!(&self.predictor, Predictor::Learned { learner, .. } if learner.model().is_none());
        if no_model {
            let victim = self.residents[self.rng.random_range(0..len)];
            self.counters.fallback_evictions += 1;
            self.remove(victim);
            return victim;
        }
        let picks = index::sample(&mut self.rng, len, self.config.sample_n.min(len));
        let mut best: Option<(f64, Tick, Key)> = None;
        for i in picks {
            let key = self.residents[i];
            let tta = self.tta(key, now).expect("model present");
            self.counters.predictions += 1;
            self.tag(key, now);
            let last = self.meta[&key].last_access.expect("resident has been accessed");
            // Larger TTA wins; then older last access; then smaller key.
            let better = match best {
                None => true,
                Some((bt, bl, bk)) => tta > bt || (tta == bt && (last < bl || (last == bl && key < bk))),
            };
            if better {
                best = Some((tta, last, key));
            }
        }
        let (_, _, victim) = best.expect("non-empty sample");
        self.remove(victim);
        victim
    }

    fn counters(&self) -> EngineCounters {
        self.counters
    }
}
