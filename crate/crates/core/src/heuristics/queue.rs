use std::collections::HashSet;

use super::list::KeyList;
use super::{HeuristicError, PriorityCache};
use crate::{Key, Tick};

/// A single queue with head reattachment; `promote_on_hit` separates LRU from FIFO.
#[derive(Debug, Default)]
struct SingleQueue {
    queue: KeyList,
    detached: HashSet<Key>,
}

impl SingleQueue {
    fn admit(&mut self, key: Key) -> Result<(), HeuristicError> {
        if self.contains(key) {
            return Err(HeuristicError::AlreadyResident(key));
        }
        self.queue.push_head(key);
        Ok(())
    }

    fn touch(&mut self, key: Key, promote_on_hit: bool) -> Result<(), HeuristicError> {
        if self.detached.contains(&key) {
            return Err(HeuristicError::Detached(key));
        }
        if !self.queue.contains(key) {
            return Err(HeuristicError::NotResident(key));
        }
        if promote_on_hit {
            self.queue.move_to_head(key);
        }
        Ok(())
    }

    fn remove_from_tail(&mut self) -> Result<Key, HeuristicError> {
        let key = self.queue.pop_tail().ok_or(HeuristicError::EmptyQueue)?;
        self.detached.insert(key);
        Ok(key)
    }

    fn insert(&mut self, key: Key) -> Result<(), HeuristicError> {
        if !self.detached.remove(&key) {
            return Err(HeuristicError::NotDetached(key));
        }
        self.queue.push_head(key);
        Ok(())
    }

    fn delete(&mut self, key: Key) -> Result<(), HeuristicError> {
        if self.detached.remove(&key) || self.queue.remove(key) {
            Ok(())
        } else {
            Err(HeuristicError::NotResident(key))
        }
    }

    fn contains(&self, key: Key) -> bool {
        self.queue.contains(key) || self.detached.contains(&key)
    }

    fn len(&self) -> usize {
        self.queue.len() + self.detached.len()
    }
}

macro_rules! queue_policy {
    ($name:ident, $label:literal, $promote:expr) => {
        #[derive(Debug, Default)]
        pub struct $name {
            inner: SingleQueue,
        }

        impl $name {
            pub fn new() -> Self {
                Self::default()
            }
        }

        impl PriorityCache for $name {
            fn name(&self) -> &'static str {
                $label
            }

            fn admit(&mut self, key: Key, _size: u64, _now: Tick) -> Result<(), HeuristicError> {
                self.inner.admit(key)
            }

            fn touch(&mut self, key: Key, _now: Tick) -> Result<(), HeuristicError> {
                self.inner.touch(key, $promote)
            }

            fn remove_from_tail(&mut self) -> Result<Key, HeuristicError> {
                self.inner.remove_from_tail()
            }

            fn insert(&mut self, key: Key, _rank_hint: f64, _now: Tick) -> Result<(), HeuristicError> {
                self.inner.insert(key)
            }

            fn delete(&mut self, key: Key) -> Result<(), HeuristicError> {
                self.inner.delete(key)
            }

            fn tail_peek(&self) -> Option<Key> {
                self.inner.queue.tail()
            }

            fn tail_keys(&self, n: usize) -> Vec<Key> {
                self.inner.queue.iter_from_tail().take(n).collect()
            }

            fn len(&self) -> usize {
                self.inner.len()
            }

            fn contains(&self, key: Key) -> bool {
                self.inner.contains(key)
            }

            fn is_detached(&self, key: Key) -> bool {
                self.inner.detached.contains(&key)
            }
        }
    };
}

queue_policy!(Lru, "lru", true);
queue_policy!(Fifo, "fifo", false);

#[cfg(test)]
mod tests {
    use super::*;

    fn filled<P: PriorityCache + Default>(keys: &[Key]) -> P {
        let mut p = P::default();
        for (t, &k) in keys.iter().enumerate() {
            p.admit(k, 1, t as Tick).unwrap();
        }
        p
    }

    const A: Key = 1;
    const B: Key = 2;
    const C: Key = 3;

    #[test]
    fn lru_touch_moves_tail() {
        let mut lru: Lru = filled(&[A, B, C]);
        assert_eq!(lru.tail_peek(), Some(A));
        lru.touch(A, 10).unwrap();
        assert_eq!(lru.tail_peek(), Some(B));
    }

    #[test]
    fn fifo_ignores_hits() {
        let mut fifo: Fifo = filled(&[A, B, C]);
        fifo.touch(A, 10).unwrap();
        assert_eq!(fifo.tail_peek(), Some(A));
    }

    #[test]
    fn successive_tails_and_exhaustion() {
        let mut lru: Lru = filled(&[A, B, C]);
        assert_eq!(lru.remove_from_tail(), Ok(A));
        assert_eq!(lru.remove_from_tail(), Ok(B));
        assert_eq!(lru.len(), 3, "detached keys stay resident");

        let mut one: Lru = filled(&[A]);
        assert_eq!(one.remove_from_tail(), Ok(A));
        assert_eq!(one.remove_from_tail(), Err(HeuristicError::EmptyQueue));
    }

    #[test]
    fn insert_reattaches_at_head() {
        let mut lru: Lru = filled(&[A, B, C]);
        assert_eq!(lru.remove_from_tail(), Ok(A));
        lru.insert(A, 500.0, 5).unwrap();
        assert_eq!(lru.tail_keys(3), vec![B, C, A]);
        assert_eq!(lru.tail_peek(), Some(B));
        assert_eq!(lru.insert(B, 1.0, 6), Err(HeuristicError::NotDetached(B)));
    }

    #[test]
    fn contract_errors() {
        let mut lru: Lru = filled(&[A]);
        assert_eq!(lru.touch(B, 1), Err(HeuristicError::NotResident(B)));
        assert_eq!(lru.admit(A, 1, 1), Err(HeuristicError::AlreadyResident(A)));
        lru.remove_from_tail().unwrap();
        assert_eq!(lru.touch(A, 2), Err(HeuristicError::Detached(A)));
        assert!(lru.is_detached(A));
        lru.delete(A).unwrap();
        assert_eq!(lru.delete(A), Err(HeuristicError::NotResident(A)));
        assert!(lru.is_empty());
    }
}
