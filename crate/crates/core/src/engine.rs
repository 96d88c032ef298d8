//! Deterministic discrete-event core.
//!
//! Simulated time is an integer count of microseconds. Events are ordered
//! by `(fire_at, seq)` where `seq` is the insertion counter, so two events
//! scheduled for the same instant pop in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// A point (or span) of simulated time in whole microseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub fn micros(self) -> u64 {
        self.0
    }

    /// Converts a real-valued duration to simulated time, rounding up so a
    /// positive duration never collapses to zero.
    pub fn from_micros_f64(us: f64) -> SimTime {
        if !us.is_finite() || us <= 0.0 {
            return SimTime::ZERO;
        }
        let ceil = us.ceil();
        if ceil >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(ceil as u64)
        }
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        self.saturating_add(rhs)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Identifier handed back by [`EventQueue::schedule`]; equal to the event's
/// sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed so the max-heap yields the smallest (fire_at, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Priority queue of pending events plus the simulation clock.
#[derive(Debug)]
pub struct EventQueue<P> {
    pending: BinaryHeap<Event<P>>,
    now: SimTime,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            pending: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Enqueues `payload` to fire `delay` after the current clock.
    pub fn schedule(&mut self, delay: SimTime, payload: P) -> EventId {
        let at = self.now.saturating_add(delay);
        self.schedule_at(at, payload)
    }

    /// Enqueues `payload` at an absolute time. Times in the past are clamped
    /// to the current clock so the clock never runs backwards.
    pub fn schedule_at(&mut self, at: SimTime, payload: P) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Event {
            fire_at: at.max(self.now),
            seq,
            payload,
        });
        EventId(seq)
    }

    /// Pops the minimum event and moves the clock to its timestamp.
    pub fn advance(&mut self) -> Option<(SimTime, P)> {
        let ev = self.pending.pop()?;
        self.now = ev.fire_at;
        Some((ev.fire_at, ev.payload))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.pending.peek().map(|e| e.fire_at)
    }
}
