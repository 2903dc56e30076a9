//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)`: simulated time first, insertion
//! order second. Two runs that schedule the same events in the same order
//! execute them identically.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::SimError;

/// Simulated time in seconds.
pub type Seconds = f64;

/// Handle returned by [`Scheduler::schedule`]; also the event's insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

/// A scheduled event carrying a caller-defined payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<E> {
    pub fire_at: Seconds,
    pub seq: u64,
    pub payload: E,
}

impl<E> Event<E> {
    pub fn id(&self) -> EventId {
        EventId(self.seq)
    }
}

struct Entry<E>(Event<E>);

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .fire_at
            .total_cmp(&self.0.fire_at)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimClock {
    pub now: Seconds,
    pub events_executed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSummary {
    pub events_executed: u64,
    pub final_clock: Seconds,
}

pub struct Scheduler<E> {
    heap: BinaryHeap<Entry<E>>,
    pending: HashSet<u64>,
    next_seq: u64,
    clock: SimClock,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            pending: HashSet::new(),
            next_seq: 0,
            clock: SimClock::default(),
        }
    }

    pub fn now(&self) -> Seconds {
        self.clock.now
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    /// Number of events that are scheduled and not cancelled.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Schedules `payload` to fire at absolute time `at`.
    ///
    /// Scheduling before the current clock (or at a non-finite time) is a
    /// contract violation and returns [`SimError::ScheduleInPast`].
    pub fn schedule(&mut self, at: Seconds, payload: E) -> Result<EventId, SimError> {
        if !at.is_finite() || at < self.clock.now || at < 0.0 {
            return Err(SimError::ScheduleInPast {
                at,
                now: self.clock.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.heap.push(Entry(Event {
            fire_at: at,
            seq,
            payload,
        }));
        Ok(EventId(seq))
    }

    /// Schedules `payload` at `now + delay`.
    pub fn schedule_in(&mut self, delay: Seconds, payload: E) -> Result<EventId, SimError> {
        self.schedule(self.clock.now + delay, payload)
    }

    /// Returns true iff the event was pending. A cancelled event never executes.
    pub fn cancel(&mut self, id: EventId) -> bool {
        self.pending.remove(&id.0)
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: Seconds) -> Option<Event<E>> {
        loop {
            let head = self.heap.peek()?;
            if head.0.fire_at > t_end {
                return None;
            }
            let Entry(ev) = self.heap.pop().expect("peeked");
            if !self.pending.remove(&ev.seq) {
                continue;
            }
            self.clock.now = ev.fire_at;
            self.clock.events_executed += 1;
            return Some(ev);
        }
    }

    /// Executes every event with `fire_at <= t_end` in order, handing each to
    /// `handler` together with the scheduler so the handler can schedule more.
    /// On return the clock reads `t_end`.
    pub fn run_until<F, Err>(&mut self, t_end: Seconds, mut handler: F) -> Result<SimSummary, Err>
    where
        F: FnMut(&mut Self, Event<E>) -> Result<(), Err>,
    {
        let start = self.clock.events_executed;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
        }
        if t_end > self.clock.now {
            self.clock.now = t_end;
        }
        Ok(SimSummary {
            events_executed: self.clock.events_executed - start,
            final_clock: self.clock.now,
        })
    }
}
