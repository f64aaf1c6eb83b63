use std::collections::{BTreeSet, HashMap, VecDeque};

use super::{HeuristicError, PriorityCache};
use crate::{Key, Tick};

/// (k-th most recent access or -1, most recent access, sequence, key)
type Rank = (i64, Tick, u64, Key);

#[derive(Debug, Clone)]
struct Entry {
    /// Most recent first, at most `k` entries.
    history: VecDeque<Tick>,
    rank: Rank,
    detached: bool,
}

/// LRU-K: ranks by the time of the K-th most recent access. Keys with fewer
/// than K recorded accesses have infinite backward distance and go first,
/// oldest last access first among them.
#[derive(Debug)]
pub struct LruK {
    k: usize,
    entries: HashMap<Key, Entry>,
    order: BTreeSet<Rank>,
    seq: u64,
}

impl LruK {
    pub fn new(k: usize) -> Self {
        assert!(k >= 2, "LRU-K needs k >= 2");
        Self { k, entries: HashMap::new(), order: BTreeSet::new(), seq: 0 }
    }

    fn history_rank(&mut self, key: Key, history: &VecDeque<Tick>) -> Rank {
        self.seq += 1;
        let kth = if history.len() >= self.k { history[self.k - 1] as i64 } else { -1 };
        (kth, history[0], self.seq, key)
    }

    fn attach(&mut self, key: Key, rank: Rank) {
        let e = self.entries.get_mut(&key).expect("attach of unknown key");
        if !e.detached {
            self.order.remove(&e.rank);
        }
        e.rank = rank;
        e.detached = false;
        self.order.insert(rank);
    }
}

impl PriorityCache for LruK {
    fn name(&self) -> &'static str {
        "lruk"
    }

    fn admit(&mut self, key: Key, _size: u64, now: Tick) -> Result<(), HeuristicError> {
        if self.entries.contains_key(&key) {
            return Err(HeuristicError::AlreadyResident(key));
        }
        let history = VecDeque::from([now]);
        let rank = self.history_rank(key, &history);
        self.entries.insert(key, Entry { history, rank, detached: true });
        self.attach(key, rank);
        Ok(())
    }

    fn touch(&mut self, key: Key, now: Tick) -> Result<(), HeuristicError> {
        let e = self.entries.get_mut(&key).ok_or(HeuristicError::NotResident(key))?;
        if e.detached {
            return Err(HeuristicError::Detached(key));
        }
        e.history.push_front(now);
        e.history.truncate(self.k);
        let history = e.history.clone();
        let rank = self.history_rank(key, &history);
        self.attach(key, rank);
        Ok(())
    }

    fn remove_from_tail(&mut self) -> Result<Key, HeuristicError> {
        let rank = self.order.pop_first().ok_or(HeuristicError::EmptyQueue)?;
        self.entries.get_mut(&rank.3).expect("ranked key has an entry").detached = true;
        Ok(rank.3)
    }

    /// Reattaches as if the K-th most recent access were `now`; the access
    /// history itself is untouched and takes over again on the next hit.
    fn insert(&mut self, key: Key, _rank_hint: f64, now: Tick) -> Result<(), HeuristicError> {
        match self.entries.get(&key) {
            Some(e) if e.detached => {
                self.seq += 1;
                let rank = (now as i64, now, self.seq, key);
                self.attach(key, rank);
                Ok(())
            }
            _ => Err(HeuristicError::NotDetached(key)),
        }
    }

    fn delete(&mut self, key: Key) -> Result<(), HeuristicError> {
        let e = self.entries.remove(&key).ok_or(HeuristicError::NotResident(key))?;
        if !e.detached {
            self.order.remove(&e.rank);
        }
        Ok(())
    }

    fn tail_peek(&self) -> Option<Key> {
        self.order.first().map(|r| r.3)
    }

    fn tail_keys(&self, n: usize) -> Vec<Key> {
        self.order.iter().take(n).map(|r| r.3).collect()
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
