use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::timing::Micros;

/// A timed event. `ordinal` is assigned at insertion and breaks ties between
/// equal times, so processing order is a total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<P> {
    pub time: Micros,
    pub ordinal: u64,
    pub payload: P,
}

struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}
impl<P> Entry<P> {
    fn key(&self) -> (Micros, u64) {
        (self.0.time, self.0.ordinal)
    }
}

/// Min-heap of events ordered by `(time, ordinal)`.
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Entry<P>>>,
    now: Micros,
    next_ordinal: u64,
    processed: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), now: Micros::ZERO, next_ordinal: 0, processed: 0 }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Panics when `time` lies in the past: that is a logic error in the caller.
    pub fn schedule(&mut self, time: Micros, payload: P) -> u64 {
        assert!(time >= self.now, "event scheduled in the past: {time} < {}", self.now);
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        self.heap.push(Reverse(Entry(SimEvent { time, ordinal, payload })));
        ordinal
    }

    pub fn peek_time(&self) -> Option<Micros> {
        self.heap.peek().map(|Reverse(e)| e.0.time)
    }

    /// Pops the next event if it is due no later than `limit`.
    pub fn pop_until(&mut self, limit: Micros) -> Option<SimEvent<P>> {
        if self.peek_time()? > limit {
            return None;
        }
        let Reverse(Entry(ev)) = self.heap.pop()?;
        debug_assert!(ev.time >= self.now, "causality violated");
        self.now = ev.time;
        self.processed += 1;
        Some(ev)
    }

    /// Processes events in order until none is due at or before `t_end`.
    /// The handler may schedule further events. Returns the number processed.
    pub fn run_until<F>(&mut self, t_end: Micros, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        assert!(t_end >= self.now, "run_until into the past");
        let start = self.processed;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
        }
        self.now = t_end;
        self.processed - start
    }
}
