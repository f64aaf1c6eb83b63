use std::collections::HashMap;

use crate::Key;

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node {
    key: Key,
    prev: usize,
    next: usize,
}

/// Doubly linked list of keys on a slab, with O(1) lookup by key.
///
/// `head` is the most recently pushed key, `tail` the oldest.
#[derive(Debug, Clone, Default)]
pub(crate) struct KeyList {
    nodes: Vec<Node>,
    free: Vec<usize>,
    index: HashMap<Key, usize>,
    head: Option<usize>,
    tail: Option<usize>,
}

impl KeyList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, key: Key) -> bool {
        self.index.contains_key(&key)
    }

    /// Pushes `key` at the head. The caller guarantees `key` is not present.
    pub fn push_head(&mut self, key: Key) {
        debug_assert!(!self.contains(key));
        let old_head = self.head.unwrap_or(NIL);
        let node = Node { key, prev: NIL, next: old_head };
        let idx = match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        if old_head != NIL {
            self.nodes[old_head].prev = idx;
        } else {
            self.tail = Some(idx);
        }
        self.head = Some(idx);
        self.index.insert(key, idx);
    }

    pub fn remove(&mut self, key: Key) -> bool {
        let Some(idx) = self.index.remove(&key) else {
            return false;
        };
        let Node { prev, next, .. } = self.nodes[idx];
        if prev != NIL {
            self.nodes[prev].next = next;
        } else {
            self.head = (next != NIL).then_some(next);
        }
        if next != NIL {
            self.nodes[next].prev = prev;
        } else {
            self.tail = (prev != NIL).then_some(prev);
        }
        self.free.push(idx);
        true
    }

    pub fn move_to_head(&mut self, key: Key) -> bool {
        if self.remove(key) {
            self.push_head(key);
            true
        } else {
            false
        }
    }

    pub fn tail(&self) -> Option<Key> {
        self.tail.map(|i| self.nodes[i].key)
    }

    pub fn pop_tail(&mut self) -> Option<Key> {
        let key = self.tail()?;
        self.remove(key);
        Some(key)
    }

    /// Keys from tail (oldest) to head.
    pub fn iter_from_tail(&self) -> impl Iterator<Item = Key> + '_ {
        let mut cur = self.tail.unwrap_or(NIL);
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let node = &self.nodes[cur];
            cur = node.prev;
            Some(node.key)
        })
    }
}
