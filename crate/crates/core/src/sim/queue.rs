use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Simulated time in milliseconds.
pub type SimTime = u64;

struct Scheduled<E> {
    at: SimTime,
    order: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.order).cmp(&(self.at, self.order))
    }
}

/// Time-ordered queue; equal times pop in insertion order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    inserted: u64,
    now: SimTime,
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), inserted: 0, now: 0 }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Panics if `at` is in the past.
    pub fn schedule(&mut self, at: SimTime, event: E) {
        assert!(at >= self.now, "event scheduled in the past ({at} < {})", self.now);
        self.heap.push(Scheduled { at, order: self.inserted, event });
        self.inserted += 1;
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|s| s.at)
    }

    /// Pops the next event at or before `until`, advancing the clock.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        if self.peek_time()? > until {
            return None;
        }
        let s = self.heap.pop()?;
        self.now = s.at;
        Some((s.at, s.event))
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_order_then_fifo() {
        let mut q = EventQueue::new();
        q.schedule(10, "c");
        q.schedule(5, "a");
        q.schedule(10, "d");
        q.schedule(5, "b");
        let mut out = vec![];
        while let Some((_, e)) = q.pop_until(100) {
            out.push(e);
        }
        assert_eq!(out, vec!["a", "b", "c", "d"]);
        assert_eq!(q.now(), 10);
    }

    #[test]
    fn respects_horizon() {
        let mut q = EventQueue::new();
        q.schedule(50, ());
        assert!(q.pop_until(49).is_none());
        assert_eq!(q.len(), 1);
        assert!(q.pop_until(50).is_some());
    }

    #[test]
    #[should_panic]
    fn rejects_past_events() {
        let mut q = EventQueue::new();
        q.schedule(10, ());
        q.pop_until(10);
        q.schedule(9, ());
    }
}
