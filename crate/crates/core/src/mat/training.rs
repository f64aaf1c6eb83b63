use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use crate::features::{feature_names, FeatureError, FeatureVector, ObjectMeta, FEATURE_COUNT};
use crate::gbdt::{self, Dataset, GbdtConfig, GbdtError, Model};
use crate::{Key, Tick};

/// Model target for an inter-access distance.
pub fn to_target(distance: f64) -> f64 {
    (1.0 + distance).log2()
}

pub fn from_target(y: f64) -> f64 {
    (y.exp2() - 1.0).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: FeatureVector,
    /// Ticks between the access preceding the tag and the next access.
    pub label: f64,
    pub tag_tick: Tick,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingTag {
    features: FeatureVector,
    tag_tick: Tick,
    last_access: Tick,
}

/// Tagged candidates waiting for their next request, and the most recent
/// labeled samples.
///
/// A tag outlives the object's eviction: the label is only known when the key
/// is requested again, which for a good eviction is long after it left the
/// cache. Tags older than `horizon` ticks are discarded unlabeled.
#[derive(Debug)]
pub struct TrainingBuffer {
    pending: HashMap<Key, PendingTag>,
    ready: VecDeque<TrainingSample>,
    batch: usize,
    horizon: u64,
    since_retrain: usize,
    emitted: u64,
    censored: u64,
    expired: u64,
}

impl TrainingBuffer {
    pub fn new(batch: usize, horizon: u64) -> Self {
        Self {
            pending: HashMap::new(),
            ready: VecDeque::new(),
            batch: batch.max(1),
            horizon,
            since_retrain: 0,
            emitted: 0,
            censored: 0,
            expired: 0,
        }
    }

    /// Snapshots `meta` at `now`; an existing tag for the key is replaced.
    pub fn tag(&mut self, meta: &ObjectMeta, now: Tick) -> Result<(), FeatureError> {
        let features = meta.build_features(now)?;
        let last_access = meta.last_access.ok_or(FeatureError::NeverAccessed(meta.key))?;
        self.pending.insert(meta.key, PendingTag { features, tag_tick: now, last_access });
        Ok(())
    }

    pub fn is_pending(&self, key: Key) -> bool {
        self.pending.contains_key(&key)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Turns a pending tag into a labeled sample when its key is requested.
    pub fn label_on_access(&mut self, key: Key, now: Tick) -> Option<TrainingSample> {
        let tag = self.pending.remove(&key)?;
        if now.saturating_sub(tag.tag_tick) > self.horizon {
            self.expired += 1;
            return None;
        }
        let sample = TrainingSample {
            features: tag.features,
            label: now.saturating_sub(tag.last_access) as f64,
            tag_tick: tag.tag_tick,
            censored: false,
        };
        self.push(sample.clone());
        Some(sample)
    }

    /// Emits a censored sample for a tagged key leaving the cache.
    pub fn censor_on_evict(&mut self, key: Key, now: Tick) -> Option<TrainingSample> {
        let tag = self.pending.remove(&key)?;
        let elapsed = now.saturating_sub(tag.last_access);
        let sample = TrainingSample {
            features: tag.features,
            label: elapsed.max(self.horizon) as f64,
            tag_tick: tag.tag_tick,
            censored: true,
        };
        self.censored += 1;
        self.push(sample.clone());
        Some(sample)
    }

    /// Drops tags that can no longer be labeled.
    pub fn expire(&mut self, now: Tick) {
        let horizon = self.horizon;
        let before = self.pending.len();
        self.pending.retain(|_, t| now.saturating_sub(t.tag_tick) <= horizon);
        self.expired += (before - self.pending.len()) as u64;
    }

    fn push(&mut self, sample: TrainingSample) {
        if self.ready.len() == self.batch {
            self.ready.pop_front();
        }
        self.ready.push_back(sample);
        self.since_retrain += 1;
        self.emitted += 1;
    }

    /// True once `batch` new samples arrived since the last retrain.
    pub fn retrain_due(&self) -> bool {
        self.since_retrain >= self.batch && self.ready.len() >= self.batch
    }

    /// The current sliding batch as a training set; resets the trigger.
    pub fn take_dataset(&mut self) -> Dataset {
        self.since_retrain = 0;
        let mut data = Dataset::with_capacity(FEATURE_COUNT, self.ready.len());
        for s in &self.ready {
            data.push(s.features.as_slice(), to_target(s.label)).expect("feature width is fixed");
        }
        data
    }

    pub fn ready_len(&self) -> usize {
        self.ready.len()
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn censored(&self) -> u64 {
        self.censored
    }

    pub fn expired(&self) -> u64 {
        self.expired
    }
}

/// CSV sink for labeled samples.
pub struct TrainingDump {
    out: Box<dyn Write + Send>,
}

impl TrainingDump {
    pub fn new(mut out: Box<dyn Write + Send>) -> std::io::Result<Self> {
        writeln!(out, "{},label,censored", feature_names().join(","))?;
        Ok(Self { out })
    }

    pub fn write(&mut self, s: &TrainingSample) -> std::io::Result<()> {
        for v in s.features.as_slice() {
            if v.is_nan() {
                write!(self.out, ",")?;
            } else {
                write!(self.out, "{v},")?;
            }
        }
        writeln!(self.out, "{},{}", s.label, u8::from(s.censored))
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

impl std::fmt::Debug for TrainingDump {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TrainingDump")
    }
}

/// Owns the current model and retrains it from a [`TrainingBuffer`].
#[derive(Debug)]
pub struct Learner {
    config: GbdtConfig,
    model: Option<Arc<Model>>,
    version: u64,
}

impl Learner {
    pub fn new(config: GbdtConfig) -> Self {
        Self { config, model: None, version: 0 }
    }

    pub fn model(&self) -> Option<&Arc<Model>> {
        self.model.as_ref()
    }

    /// Incremented on every model replacement; 0 means no model yet.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn retrain(&mut self, data: &Dataset) -> Result<(), GbdtError> {
        let model = gbdt::train(data, &self.retrain_config())?;
        self.install(Arc::new(model));
        Ok(())
    }

    /// Config for the next retrain; bagging draws differ between retrains.
    pub fn retrain_config(&self) -> GbdtConfig {
        GbdtConfig {
            seed: self.config.seed.wrapping_add(self.version.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.config
        }
    }

    pub fn install(&mut self, model: Arc<Model>) {
        self.model = Some(model);
        self.version += 1;
    }
}

/// Predicted inter-access distance for a feature vector.
pub fn predict_distance(model: &Model, features: &FeatureVector) -> f64 {
    from_target(model.predict_unchecked(features.as_slice()))
}
