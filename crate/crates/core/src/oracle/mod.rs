//! Offline and sampling baselines: Belady's MIN and an LRB-style sampler.

mod sampled;

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::sim::{EngineCounters, EvictionEngine};
use crate::{Key, Request, Tick};

pub use sampled::{Predictor, SampledEngine, SamplerConfig};

/// Position of each request's next same-key request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextAccessIndex {
    next: Vec<Tick>,
}

/// Marker for "never requested again".
pub const NEVER: Tick = Tick::MAX;

impl NextAccessIndex {
    /// One backward pass over the trace.
    pub fn build(requests: &[Request]) -> Self {
        let mut next = vec![NEVER; requests.len()];
        let mut seen: HashMap<Key, Tick> = HashMap::new();
        for (pos, req) in requests.iter().enumerate().rev() {
            if let Some(n) = seen.insert(req.key, pos as Tick) {
                next[pos] = n;
            }
        }
        Self { next }
    }

    /// Next request of the key requested at `pos`, or `None` if there is none.
    pub fn next(&self, pos: Tick) -> Option<Tick> {
        match self.next.get(pos as usize) {
            Some(&n) if n != NEVER => Some(n),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }
}

/// Belady's MIN: evicts the resident whose next request is furthest away.
/// Ties (objects never requested again) go to the least recently used, then
/// to the smaller key.
pub struct BeladyEngine {
    index: Arc<NextAccessIndex>,
    /// (next access, Reverse(last access), Reverse(key)); the maximum is evicted.
    order: BTreeSet<(Tick, Reverse<Tick>, Reverse<Key>)>,
    entries: HashMap<Key, (Tick, Tick)>,
}

impl BeladyEngine {
    pub fn new(index: Arc<NextAccessIndex>) -> Self {
        Self { index, order: BTreeSet::new(), entries: HashMap::new() }
    }

    pub fn for_trace(requests: &[Request]) -> Self {
        Self::new(Arc::new(NextAccessIndex::build(requests)))
    }

    fn record(&mut self, req: &Request) {
        if let Some((next, last)) = self.entries.remove(&req.key) {
            self.order.remove(&(next, Reverse(last), Reverse(req.key)));
        }
        let next = self.index.next(req.time).unwrap_or(NEVER);
        self.order.insert((next, Reverse(req.time), Reverse(req.key)));
        self.entries.insert(req.key, (next, req.time));
    }

    /// The resident that would be evicted now.
    pub fn peek_victim(&self) -> Option<Key> {
        self.order.last().map(|&(_, _, Reverse(k))| k)
    }

    /// Next request time of a resident (`NEVER` if none).
    pub fn next_access(&self, key: Key) -> Option<Tick> {
        self.entries.get(&key).map(|&(n, _)| n)
    }
}

impl EvictionEngine for BeladyEngine {
    fn name(&self) -> String {
        "belady".into()
    }

    fn on_hit(&mut self, req: &Request) {
        self.record(req);
    }

    fn on_miss(&mut self, _req: &Request) {}

    fn on_admit(&mut self, req: &Request) {
        self.record(req);
    }

    fn evict(&mut self, _now: Tick) -> Key {
        let (_, _, Reverse(key)) = self.order.pop_last().expect("evict called on an empty cache");
        self.entries.remove(&key);
        key
    }

    fn counters(&self) -> EngineCounters {
        EngineCounters::default()
    }
}
