//! Priority-queue heuristic caches.
//!
//! Every policy maintains a total order over resident keys and exposes the
//! tail of that order to an eviction engine. A key taken from the tail with
//! [`PriorityCache::remove_from_tail`] is *detached*: it is still resident in
//! the cache but holds no queue position until it is either reattached with
//! [`PriorityCache::insert`] or evicted with [`PriorityCache::delete`].
//!
//! Queue-discipline policies (LRU, FIFO, 2Q) reattach at the head and ignore
//! the rank hint. Score-based policies (LFUDA, LRU-K) reattach with a score
//! aged to the present so the key does not surface at the tail again right
//! away.

mod lfuda;
mod list;
mod lruk;
mod queue;
mod two_q;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{EngineCounters, EvictionEngine};
use crate::{Key, Request, Tick};

pub use lfuda::Lfuda;
pub use lruk::LruK;
pub use queue::{Fifo, Lru};
pub use two_q::TwoQ;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeuristicError {
    #[error("key {0} is not resident")]
    NotResident(Key),
    #[error("key {0} is already resident")]
    AlreadyResident(Key),
    #[error("key {0} is detached from its queue")]
    Detached(Key),
    #[error("key {0} is not detached")]
    NotDetached(Key),
    #[error("queue is empty")]
    EmptyQueue,
    #[error("invalid heuristic: {0}")]
    Invalid(String),
}

/// The filter interface between a heuristic cache and an eviction engine.
pub trait PriorityCache: Send {
    fn name(&self) -> &'static str;

    /// Adds a newly cached key.
    fn admit(&mut self, key: Key, size: u64, now: Tick) -> Result<(), HeuristicError>;

    /// Re-ranks a resident key after a hit.
    fn touch(&mut self, key: Key, now: Tick) -> Result<(), HeuristicError>;

    /// Detaches and returns the lowest-ranked attached key.
    fn remove_from_tail(&mut self) -> Result<Key, HeuristicError>;

    /// Reattaches a detached key. `rank_hint` is the predicted time to next
    /// access; policies may ignore it.
    fn insert(&mut self, key: Key, rank_hint: f64, now: Tick) -> Result<(), HeuristicError>;

    /// Evicts a resident key, attached or detached.
    fn delete(&mut self, key: Key) -> Result<(), HeuristicError>;

    /// The key `remove_from_tail` would return next.
    fn tail_peek(&self) -> Option<Key>;

    /// Up to `n` keys in the order successive `remove_from_tail` calls would
    /// return them.
    fn tail_keys(&self, n: usize) -> Vec<Key>;

    /// Resident keys, attached or detached.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn contains(&self, key: Key) -> bool;

    fn is_detached(&self, key: Key) -> bool;
}

/// Which heuristic to build, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum HeuristicKind {
    Lru,
    Fifo,
    Lfuda,
    #[serde(rename = "lruk")]
    LruK {
        k_hist: usize,
    },
    #[serde(rename = "2q")]
    TwoQ {
        a1in_frac: f64,
        a1out_frac: f64,
    },
}

impl HeuristicKind {
    pub const DEFAULT_LRUK_HIST: usize = 2;
    pub const DEFAULT_A1IN_FRAC: f64 = 0.25;
    pub const DEFAULT_A1OUT_FRAC: f64 = 0.5;

    pub fn validate(&self) -> Result<(), HeuristicError> {
        match *self {
            HeuristicKind::LruK { k_hist } if k_hist < 2 => {
                Err(HeuristicError::Invalid(format!("lruk needs k ≥ 2, got {k_hist}")))
            }
            HeuristicKind::TwoQ { a1in_frac, a1out_frac }
                if !(a1in_frac > 0.0 && a1in_frac < 1.0 && a1out_frac > 0.0 && a1out_frac < 1.0) =>
            {
                Err(HeuristicError::Invalid(format!(
                    "2q fractions must lie in (0,1), got a1in={a1in_frac} a1out={a1out_frac}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Applies one `name=value` parameter.
    pub fn with_param(self, name: &str, value: &str) -> Result<Self, HeuristicError> {
        let bad = || HeuristicError::Invalid(format!("bad value {value:?} for {name}"));
        let kind = match (self, name) {
            (HeuristicKind::LruK { .. }, "k") => HeuristicKind::LruK { k_hist: value.parse().map_err(|_| bad())? },
            (HeuristicKind::TwoQ { a1out_frac, .. }, "a1in") => {
                HeuristicKind::TwoQ { a1in_frac: value.parse().map_err(|_| bad())?, a1out_frac }
            }
            (HeuristicKind::TwoQ { a1in_frac, .. }, "a1out") => {
                HeuristicKind::TwoQ { a1in_frac, a1out_frac: value.parse().map_err(|_| bad())? }
            }
            _ => return Err(HeuristicError::Invalid(format!("{self} takes no parameter {name:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn build(&self, capacity_bytes: u64) -> Result<Box<dyn PriorityCache>, HeuristicError> {
        self.validate()?;
        Ok(match *self {
            HeuristicKind::Lru => Box::new(Lru::new()),
            HeuristicKind::Fifo => Box::new(Fifo::new()),
            HeuristicKind::Lfuda => Box::new(Lfuda::new()),
            HeuristicKind::LruK { k_hist } => Box::new(LruK::new(k_hist)),
            HeuristicKind::TwoQ { a1in_frac, a1out_frac } => Box::new(TwoQ::new(capacity_bytes, a1in_frac, a1out_frac)),
        })
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeuristicKind::Lru => f.write_str("lru"),
            HeuristicKind::Fifo => f.write_str("fifo"),
            HeuristicKind::Lfuda => f.write_str("lfuda"),
            HeuristicKind::LruK { .. } => f.write_str("lruk"),
            HeuristicKind::TwoQ { .. } => f.write_str("2q"),
        }
    }
}

impl FromStr for HeuristicKind {
    type Err = HeuristicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(HeuristicKind::Lru),
            "fifo" => Ok(HeuristicKind::Fifo),
            "lfuda" => Ok(HeuristicKind::Lfuda),
            "lruk" | "lru-k" => Ok(HeuristicKind::LruK { k_hist: Self::DEFAULT_LRUK_HIST }),
            "2q" | "twoq" => {
                Ok(HeuristicKind::TwoQ { a1in_frac: Self::DEFAULT_A1IN_FRAC, a1out_frac: Self::DEFAULT_A1OUT_FRAC })
            }
            other => Err(HeuristicError::Invalid(format!("unknown heuristic {other:?}"))),
        }
    }
}

/// A bare heuristic used directly as an eviction engine.
pub struct HeuristicEngine {
    policy: Box<dyn PriorityCache>,
    label: String,
}

impl HeuristicEngine {
    pub fn new(kind: HeuristicKind, capacity_bytes: u64) -> Result<Self, HeuristicError> {
        Ok(Self { policy: kind.build(capacity_bytes)?, label: kind.to_string() })
    }

    pub fn policy(&self) -> &dyn PriorityCache {
        self.policy.as_ref()
    }
}

impl EvictionEngine for HeuristicEngine {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn on_hit(&mut self, req: &Request) {
        self.policy.touch(req.key, req.time).expect("hit on a key the heuristic does not hold");
    }

    fn on_miss(&mut self, _req: &Request) {}

    fn on_admit(&mut self, req: &Request) {
        self.policy.admit(req.key, req.size, req.time).expect("admitting a key the heuristic already holds");
    }

    fn evict(&mut self, _now: Tick) -> Key {
        let victim = self.policy.remove_from_tail().expect("evict called on an empty cache");
        self.policy.delete(victim).expect("detached victim must be deletable");
        victim
    }

    fn counters(&self) -> EngineCounters {
        EngineCounters::default()
    }
}
