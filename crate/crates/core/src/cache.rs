use std::collections::{HashSet, VecDeque};

use crate::address::Address;
use crate::pdu::Seq;

pub const DEFAULT_CACHE_CAPACITY: usize = 128;

/// Bounded FIFO set of recently seen `(src, seq)` pairs.
#[derive(Debug, Clone)]
pub struct MessageCache {
    capacity: usize,
    order: VecDeque<(Address, Seq)>,
    members: HashSet<(Address, Seq)>,
}

impl MessageCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "message cache capacity must be positive");
        MessageCache {
            capacity,
            order: VecDeque::with_capacity(capacity),
            members: HashSet::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, src: Address, seq: Seq) -> bool {
        self.members.contains(&(src, seq))
    }

    /// Returns `true` and records the pair if it was not retained; `false`
    /// with no side effects otherwise.
    pub fn check_insert(&mut self, src: Address, seq: Seq) -> bool {
        if self.members.contains(&(src, seq)) {
            return false;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.members.remove(&old);
            }
        }
        self.order.push_back((src, seq));
        self.members.insert((src, seq));
        true
    }
}

impl Default for MessageCache {
    fn default() -> Self {
        MessageCache::new(DEFAULT_CACHE_CAPACITY)
    }
}
