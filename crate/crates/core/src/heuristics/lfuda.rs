use std::collections::{BTreeSet, HashMap};

use ordered_float::OrderedFloat;

use super::{HeuristicError, PriorityCache};
use crate::{Key, Tick};

type Rank = (OrderedFloat<f64>, u64, Key);

#[derive(Debug, Clone)]
struct Entry {
    hits: u64,
    priority: f64,
    seq: u64,
    detached: bool,
}

/// LFU with dynamic aging: priority = access count + age base, where the age
/// base is the priority of the last evicted key. Equal priorities fall back to
/// least recently ranked first.
#[derive(Debug, Default)]
pub struct Lfuda {
    entries: HashMap<Key, Entry>,
    order: BTreeSet<Rank>,
    age_base: f64,
    seq: u64,
}

impl Lfuda {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn age_base(&self) -> f64 {
        self.age_base
    }

    pub fn priority(&self, key: Key) -> Option<f64> {
        self.entries.get(&key).map(|e| e.priority)
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn rerank(&mut self, key: Key) {
        let seq = self.next_seq();
        let age_base = self.age_base;
        let e = self.entries.get_mut(&key).expect("rerank of unknown key");
        if !e.detached {
            self.order.remove(&(OrderedFloat(e.priority), e.seq, key));
        }
        e.priority = e.hits as f64 + age_base;
        e.seq = seq;
        e.detached = false;
        self.order.insert((OrderedFloat(e.priority), e.seq, key));
    }
}

impl PriorityCache for Lfuda {
    fn name(&self) -> &'static str {
        "lfuda"
    }

    fn admit(&mut self, key: Key, _size: u64, _now: Tick) -> Result<(), HeuristicError> {
        if self.entries.contains_key(&key) {
            return Err(HeuristicError::AlreadyResident(key));
        }
        self.entries.insert(key, Entry { hits: 1, priority: 0.0, seq: 0, detached: true });
        self.rerank(key);
        Ok(())
    }

    fn touch(&mut self, key: Key, _now: Tick) -> Result<(), HeuristicError> {
        let e = self.entries.get_mut(&key).ok_or(HeuristicError::NotResident(key))?;
        if e.detached {
            return Err(HeuristicError::Detached(key));
        }
        e.hits += 1;
        self.rerank(key);
        Ok(())
    }

    fn remove_from_tail(&mut self) -> Result<Key, HeuristicError> {
        let (_, _, key) = self.order.pop_first().ok_or(HeuristicError::EmptyQueue)?;
        self.entries.get_mut(&key).expect("ranked key has an entry").detached = true;
        Ok(key)
    }

    fn insert(&mut self, key: Key, _rank_hint: f64, _now: Tick) -> Result<(), HeuristicError> {
        match self.entries.get(&key) {
            Some(e) if e.detached => {
                self.rerank(key);
                Ok(())
            }
            _ => Err(HeuristicError::NotDetached(key)),
        }
    }

    fn delete(&mut self, key: Key) -> Result<(), HeuristicError> {
        let e = self.entries.remove(&key).ok_or(HeuristicError::NotResident(key))?;
        if !e.detached {
            self.order.remove(&(OrderedFloat(e.priority), e.seq, key));
        }
        self.age_base = e.priority;
        Ok(())
    }

    fn tail_peek(&self) -> Option<Key> {
        self.order.first().map(|r| r.2)
    }

    fn tail_keys(&self, n: usize) -> Vec<Key> {
        self.order.iter().take(n).map(|r| r.2).collect()
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn contains(&self, key: Key) -> bool {
        self.entries.contains_key(&key)
    }

    fn is_detached(&self, key: Key) -> bool {
        self.entries.get(&key).is_some_and(|e| e.detached)
    }
}
