//! MAT with the ML work moved off the request path.
//!
//! Tail candidates are pulled ahead of demand and sent through a bounded
//! candidate queue to prediction workers. Workers score them against the
//! current threshold and send verdicts back; accepted candidates wait in the
//! eviction queue. An eviction takes the oldest accepted candidate that is
//! still valid, and falls back to the raw heuristic tail when there is none.
//! A trainer thread retrains on labeled samples and swaps the model in
//! atomically. Results depend on thread timing, so runs are not reproducible.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};
use log::{info, warn};

use super::training::{predict_distance, Learner, TrainingBuffer};
use super::{estimate_tta, MatConfig, MatError, ThresholdState};
use crate::features::{EdcSchedule, FeatureVector, ObjectMeta};
use crate::gbdt::{GbdtConfig, Model};
use crate::heuristics::{HeuristicError, HeuristicKind, PriorityCache};
use crate::seed::{self, Stream};
use crate::sim::{EngineCounters, EvictionEngine};
use crate::{Key, Request, Tick};

type SharedModel = Arc<RwLock<Option<Arc<Model>>>>;

struct Job {
    key: Key,
    ticket: u64,
    features: FeatureVector,
}

struct Verdict {
    key: Key,
    ticket: u64,
    tta: f64,
    accept: bool,
}

enum TrainerMsg {
    Sample(FeatureVector, f64),
}

pub struct PipelinedMatEngine {
    config: MatConfig,
    label: String,
    policy: Box<dyn PriorityCache>,
    meta: HashMap<Key, ObjectMeta>,
    schedule: EdcSchedule,
    buffer: TrainingBuffer,
    /// Detached candidates awaiting a verdict, by ticket.
    in_flight: HashMap<Key, u64>,
    accepted: VecDeque<(Key, u64)>,
    next_ticket: u64,
    threshold: Option<ThresholdState>,
    shared_t: Arc<AtomicU64>,
    model: SharedModel,
    retrains: Arc<AtomicU64>,
    verdicts_since_eviction: usize,
    counters: EngineCounters,
    depth: usize,
    job_tx: Option<Sender<Job>>,
    verdict_rx: Receiver<Verdict>,
    sample_tx: Option<Sender<TrainerMsg>>,
    threads: Vec<JoinHandle<()>>,
}

impl PipelinedMatEngine {
    pub fn new(kind: HeuristicKind, capacity_bytes: u64, config: MatConfig, workers: usize) -> Result<Self, MatError> {
        config.validate()?;
        if workers == 0 {
            return Err(MatError::InvalidConfig("need at least one worker".into()));
        }
        let depth = config.batch_b.max(config.cap_l);
        let (job_tx, job_rx) = bounded::<Job>(depth);
        let (verdict_tx, verdict_rx) = unbounded::<Verdict>();
        let (sample_tx, sample_rx) = unbounded::<TrainerMsg>();
        let model: SharedModel = Arc::new(RwLock::new(None));
        let shared_t = Arc::new(AtomicU64::new(f64::INFINITY.to_bits()));
        let retrains = Arc::new(AtomicU64::new(0));

        let mut threads = Vec::with_capacity(workers + 1);
        for _ in 0..workers {
            let (rx, tx, model, t) = (job_rx.clone(), verdict_tx.clone(), model.clone(), shared_t.clone());
            threads.push(std::thread::spawn(move || worker(rx, tx, model, t)));
        }
        let gbdt = GbdtConfig { seed: seed::derive_seed(config.seed, Stream::Bagging), ..config.gbdt };
        let (m, r) = (model.clone(), retrains.clone());
        let batch = config.train_batch;
        threads.push(std::thread::spawn(move || trainer(sample_rx, m, r, gbdt, batch)));

        Ok(Self {
            label: format!("mat-{kind}-pipelined"),
            policy: kind.build(capacity_bytes)?,
            meta: HashMap::new(),
            schedule: EdcSchedule::with_offset(config.edc_offset),
            // The trainer owns the sample window; this buffer only tracks tags.
            buffer: TrainingBuffer::new(2, config.label_horizon),
            in_flight: HashMap::new(),
            accepted: VecDeque::new(),
            next_ticket: 0,
            threshold: config.t0.map(ThresholdState::new),
            shared_t,
            model,
            retrains,
            verdicts_since_eviction: 0,
            counters: EngineCounters::default(),
            depth,
            job_tx: Some(job_tx),
            verdict_rx,
            sample_tx: Some(sample_tx),
            threads,
            config,
        })
    }

    fn has_model(&self) -> bool {
        self.model.read().expect("model lock poisoned").is_some()
    }

    fn handle(&mut self, v: Verdict, now: Tick) {
        if self.in_flight.get(&v.key) != Some(&v.ticket) {
            return;
        }
        self.counters.predictions += 1;
        self.verdicts_since_eviction += 1;
        if v.accept {
            self.accepted.push_back((v.key, v.ticket));
        } else {
            self.in_flight.remove(&v.key);
            self.policy.insert(v.key, v.tta, now).expect("in-flight key is detached");
        }
    }

    fn drain_verdicts(&mut self, now: Tick) {
        while let Ok(v) = self.verdict_rx.try_recv() {
            self.handle(v, now);
        }
    }

    fn top_up(&mut self, now: Tick) {
        let Some(tx) = self.job_tx.clone() else { return };
        while self.in_flight.len() < self.depth {
            let key = match self.policy.remove_from_tail() {
                Ok(k) => k,
                Err(HeuristicError::EmptyQueue) => break,
                Err(e) => panic!("heuristic tail failed: {e}"),
            };
            let meta = &self.meta[&key];
            self.buffer.tag(meta, now).expect("candidate has been accessed");
            let features = meta.build_features(now).expect("candidate has been accessed");
            self.next_ticket += 1;
            let ticket = self.next_ticket;
            match tx.try_send(Job { key, ticket, features }) {
                Ok(()) => {
                    self.in_flight.insert(key, ticket);
                }
                Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                    self.policy.insert(key, 0.0, now).expect("just detached");
                    break;
                }
            }
        }
    }

    /// Re-attaches a key whose verdict is still pending.
    fn recall(&mut self, key: Key, now: Tick) {
        if self.in_flight.remove(&key).is_some() {
            self.policy.insert(key, 0.0, now).expect("in-flight key is detached");
        }
    }

    fn forget(&mut self, victim: Key) {
        self.policy.delete(victim).expect("victim is detached");
        self.meta.remove(&victim);
    }

    fn label(&mut self, key: Key, now: Tick) {
        if let Some(s) = self.buffer.label_on_access(key, now) {
            self.counters.training_samples += 1;
            if let Some(tx) = &self.sample_tx {
                let _ = tx.send(TrainerMsg::Sample(s.features, s.label));
            }
        }
        if now > 0 && now.is_multiple_of(1 << 16) {
            self.buffer.expire(now);
        }
    }
}

impl EvictionEngine for PipelinedMatEngine {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn on_hit(&mut self, req: &Request) {
        self.label(req.key, req.time);
        self.recall(req.key, req.time);
        let meta = self.meta.get_mut(&req.key).expect("hit on unknown key");
        meta.on_access(req.time, &self.schedule).expect("requests are time ordered");
        self.policy.touch(req.key, req.time).expect("hit on a key the heuristic does not hold");
    }

    fn on_miss(&mut self, req: &Request) {
        self.label(req.key, req.time);
    }

    fn on_admit(&mut self, req: &Request) {
        let mut meta = ObjectMeta::new(req.key, req.size);
        meta.on_access(req.time, &self.schedule).expect("requests are time ordered");
        self.meta.insert(req.key, meta);
        self.policy.admit(req.key, req.size, req.time).expect("admitting a resident key");
    }

    fn evict(&mut self, now: Tick) -> Key {
        self.drain_verdicts(now);
        let model_ready = self.has_model();
        if model_ready {
            if self.threshold.is_none() {
                self.threshold = Some(ThresholdState::new(self.policy.len().max(1) as f64));
            }
            self.top_up(now);
        }

        let mut victim = None;
        while let Some((key, ticket)) = self.accepted.pop_front() {
            if self.in_flight.get(&key) == Some(&ticket) {
                self.in_flight.remove(&key);
                victim = Some(key);
                break;
            }
        }
        let victim = match victim {
            Some(v) => v,
            None => loop {
                match self.policy.remove_from_tail() {
                    Ok(v) => {
                        self.counters.fallback_evictions += 1;
                        self.buffer.tag(&self.meta[&v], now).expect("tail has been accessed");
                        break v;
                    }
                    Err(HeuristicError::EmptyQueue) => {
                        // Everything is in flight: take back the oldest candidate.
                        let key = *self
                            .in_flight
                            .iter()
                            .min_by_key(|(_, &t)| t)
                            .expect("non-empty cache with nothing in flight")
                            .0;
                        self.recall(key, now);
                    }
                    Err(e) => panic!("heuristic tail failed: {e}"),
                }
            },
        };
        self.forget(victim);

        let r = std::mem::take(&mut self.verdicts_since_eviction);
        if let Some(state) = &mut self.threshold {
            if r > 0 {
                state.update(r, self.config.k, self.config.delta);
            }
            self.shared_t.store(state.t.to_bits(), Ordering::Relaxed);
        }
        victim
    }

    fn counters(&self) -> EngineCounters {
        EngineCounters { retrains: self.retrains.load(Ordering::Relaxed), ..self.counters }
    }
}

impl Drop for PipelinedMatEngine {
    fn drop(&mut self) {
        self.job_tx.take();
        self.sample_tx.take();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn worker(jobs: Receiver<Job>, verdicts: Sender<Verdict>, model: SharedModel, t: Arc<AtomicU64>) {
    for job in jobs {
        let current = model.read().expect("model lock poisoned").clone();
        let Some(m) = current else {
            let _ = verdicts.send(Verdict { key: job.key, ticket: job.ticket, tta: 0.0, accept: false });
            continue;
        };
        let distance = predict_distance(&m, &job.features);
        let tta = estimate_tta(distance, job.features.age() as f64);
        let accept = tta >= f64::from_bits(t.load(Ordering::Relaxed));
        if verdicts.send(Verdict { key: job.key, ticket: job.ticket, tta, accept }).is_err() {
            break;
        }
    }
}

fn trainer(
    samples: Receiver<TrainerMsg>,
    model: SharedModel,
    retrains: Arc<AtomicU64>,
    gbdt: GbdtConfig,
    batch: usize,
) {
    let mut window: VecDeque<(FeatureVector, f64)> = VecDeque::new();
    let mut fresh = 0usize;
    let mut learner = Learner::new(gbdt);
    while let Ok(first) = samples.recv() {
        // Drain the backlog so a slow retrain never fits a stale window.
        for TrainerMsg::Sample(features, label) in std::iter::once(first).chain(samples.try_iter()) {
            if window.len() == batch {
                window.pop_front();
            }
            window.push_back((features, label));
            fresh += 1;
        }
        if fresh < batch {
            continue;
        }
        fresh = 0;
        let mut data = crate::gbdt::Dataset::with_capacity(crate::features::FEATURE_COUNT, window.len());
        for (f, l) in &window {
            data.push(f.as_slice(), super::to_target(*l)).expect("fixed width");
        }
        match learner.retrain(&data) {
            Ok(()) => {
                let m = learner.model().cloned();
                *model.write().expect("model lock poisoned") = m;
                let n = retrains.fetch_add(1, Ordering::Relaxed) + 1;
                info!("pipelined retrain {n} on {} samples", data.len());
            }
            Err(e) => warn!("pipelined retrain failed: {e}"),
        }
    }
}
