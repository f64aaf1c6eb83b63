use std::collections::HashMap;

use super::list::KeyList;
use super::{HeuristicError, PriorityCache};
use crate::{Key, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Queue {
    /// Probationary FIFO for first-time objects.
    A1in,
    /// Main LRU for objects seen again after leaving A1in.
    Am,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    queue: Queue,
    size: u64,
    detached: bool,
}

/// Full 2Q: A1in (FIFO, resident), A1out (ghost keys evicted from A1in) and
/// Am (LRU, resident). A miss on a key remembered in A1out is admitted to Am.
///
/// The tail is taken from A1in while its attached bytes exceed the A1in
/// budget (or Am is empty), otherwise from Am.
#[derive(Debug)]
pub struct TwoQ {
    a1in: KeyList,
    am: KeyList,
    a1out: KeyList,
    slots: HashMap<Key, Slot>,
    ghost_sizes: HashMap<Key, u64>,
    a1in_bytes: u64,
    a1out_bytes: u64,
    kin: f64,
    kout: f64,
}

impl TwoQ {
    pub fn new(capacity_bytes: u64, a1in_frac: f64, a1out_frac: f64) -> Self {
        Self {
            a1in: KeyList::new(),
            am: KeyList::new(),
            a1out: KeyList::new(),
            slots: HashMap::new(),
            ghost_sizes: HashMap::new(),
            a1in_bytes: 0,
            a1out_bytes: 0,
            kin: a1in_frac * capacity_bytes as f64,
            kout: a1out_frac * capacity_bytes as f64,
        }
    }

    fn prefer_a1in(&self, a1in_bytes: u64, a1in_empty: bool, am_empty: bool) -> bool {
        !a1in_empty && (a1in_bytes as f64 > self.kin || am_empty)
    }

    fn remember_ghost(&mut self, key: Key, size: u64) {
        self.a1out.push_head(key);
        self.ghost_sizes.insert(key, size);
        self.a1out_bytes += size;
        while self.a1out_bytes as f64 > self.kout {
            let Some(old) = self.a1out.pop_tail() else { break };
            self.a1out_bytes -= self.ghost_sizes.remove(&old).unwrap_or(0);
        }
    }

    fn list_mut(&mut self, q: Queue) -> &mut KeyList {
        match q {
            Queue::A1in => &mut self.a1in,
            Queue::Am => &mut self.am,
        }
    }

    pub fn in_a1out(&self, key: Key) -> bool {
        self.a1out.contains(key)
    }
}

impl PriorityCache for TwoQ {
    fn name(&self) -> &'static str {
        "2q"
    }

    fn admit(&mut self, key: Key, size: u64, _now: Tick) -> Result<(), HeuristicError> {
        if self.slots.contains_key(&key) {
            return Err(HeuristicError::AlreadyResident(key));
        }
        let queue = if self.a1out.remove(key) {
            self.a1out_bytes -= self.ghost_sizes.remove(&key).unwrap_or(0);
            self.am.push_head(key);
            Queue::Am
        } else {
            self.a1in.push_head(key);
            self.a1in_bytes += size;
            Queue::A1in
        };
        self.slots.insert(key, Slot { queue, size, detached: false });
        Ok(())
    }

    fn touch(&mut self, key: Key, _now: Tick) -> Result<(), HeuristicError> {
        let slot = *self.slots.get(&key).ok_or(HeuristicError::NotResident(key))?;
        if slot.detached {
            return Err(HeuristicError::Detached(key));
        }
        if slot.queue == Queue::Am {
            self.am.move_to_head(key);
        }
        Ok(())
    }

    fn remove_from_tail(&mut self) -> Result<Key, HeuristicError> {
        let queue = if self.prefer_a1in(self.a1in_bytes, self.a1in.is_empty(), self.am.is_empty()) {
            Queue::A1in
        } else if !self.am.is_empty() {
            Queue::Am
        } else {
            return Err(HeuristicError::EmptyQueue);
        };
        let key = self.list_mut(queue).pop_tail().ok_or(HeuristicError::EmptyQueue)?;
        let slot = self.slots.get_mut(&key).expect("queued key has a slot");
        slot.detached = true;
        if queue == Queue::A1in {
            self.a1in_bytes -= slot.size;
        }
        Ok(key)
    }

    fn insert(&mut self, key: Key, _rank_hint: f64, _now: Tick) -> Result<(), HeuristicError> {
        let slot = match self.slots.get_mut(&key) {
            Some(s) if s.detached => s,
            _ => return Err(HeuristicError::NotDetached(key)),
        };
        slot.detached = false;
        let Slot { queue, size, .. } = *slot;
        if queue == Queue::A1in {
            self.a1in_bytes += size;
        }
        self.list_mut(queue).push_head(key);
        Ok(())
    }

    fn delete(&mut self, key: Key) -> Result<(), HeuristicError> {
        let slot = self.slots.remove(&key).ok_or(HeuristicError::NotResident(key))?;
        if !slot.detached {
            self.list_mut(slot.queue).remove(key);
            if slot.queue == Queue::A1in {
                self.a1in_bytes -= slot.size;
            }
        }
        if slot.queue == Queue::A1in {
            self.remember_ghost(key, slot.size);
        }
        Ok(())
    }

    fn tail_peek(&self) -> Option<Key> {
        self.tail_keys(1).first().copied()
    }

    fn tail_keys(&self, n: usize) -> Vec<Key> {
        let mut out = Vec::with_capacity(n.min(self.slots.len()));
        let mut a1in = self.a1in.iter_from_tail().peekable();
        let mut am = self.am.iter_from_tail().peekable();
        let mut bytes = self.a1in_bytes;
        while out.len() < n {
            let take_a1in = self.prefer_a1in(bytes, a1in.peek().is_none(), am.peek().is_none());
            let next = if take_a1in { a1in.next() } else { am.next() };
            match next {
                Some(k) => {
                    if take_a1in {
                        bytes -= self.slots[&k].size;
                    }
                    out.push(k);
                }
                None => break,
            }
        }
        out
    }

    fn len(&self) -> usize {
        self.slots.len()
    }

    fn contains(&self, key: Key) -> bool {
        self.slots.contains_key(&key)
    }

    fn is_detached(&self, key: Key) -> bool {
        self.slots.get(&key).is_some_and(|s| s.detached)
    }
}
