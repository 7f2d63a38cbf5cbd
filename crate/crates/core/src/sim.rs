//! Discrete-event engine: a time-ordered queue of events with a global clock.
//!
//! Events are totally ordered by `(time, seq)` where `seq` is assigned in
//! schedule-call order, so two events at the same instant are delivered in
//! the order they were scheduled. The loop itself draws no randomness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since the scenario epoch (plus the run's epoch offset).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn seconds(self) -> f64 {
        self.0
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.0)
    }
}

/// Index of the actor (node) an event is addressed to.
pub type ActorId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub target: ActorId,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {time} is before the current clock {clock}")]
    PastEvent { time: SimTime, clock: SimTime },
    #[error("non-finite event time")]
    NonFiniteTime,
    #[error("run_until({requested}) is before the current clock {clock}")]
    ClockRewind { requested: SimTime, clock: SimTime },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

pub struct EventQueue<P> {
    heap: BinaryHeap<Queued<P>>,
    clock: SimTime,
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
            heap: BinaryHeap::new(),
            clock: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `payload` for `target` at `time` and returns the assigned sequence number.
    /// Scheduling at the current clock is allowed.
    pub fn schedule(&mut self, time: SimTime, target: ActorId, payload: P) -> Result<u64, SimError> {
        if !time.0.is_finite() {
            return Err(SimError::NonFiniteTime);
        }
        if time.0 < self.clock.0 {
            return Err(SimError::PastEvent {
                time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(Event {
            time,
            seq,
            target,
            payload,
        }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|q| q.0.time)
    }

    /// Pops the minimum `(time, seq)` event if its time is `<= t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        match self.heap.peek() {
            Some(q) if q.0.time.0 <= t_end.0 => {
                let ev = self.heap.pop().map(|q| q.0)?;
                self.clock = ev.time;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Delivers every event with `time <= t_end` to `handler` in `(time, seq)` order
    /// and leaves the clock at `t_end`. Handlers may schedule further events,
    /// including at the current instant.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<usize, E>
    where
        F: FnMut(Event<P>, &mut EventQueue<P>) -> Result<(), E>,
        E: From<SimError>,
    {
        if t_end.0 < self.clock.0 {
            return Err(SimError::ClockRewind {
                requested: t_end,
                clock: self.clock,
            }
            .into());
        }
        let mut processed = 0;
        while let Some(ev) = self.pop_until(t_end) {
            processed += 1;
            handler(ev, self)?;
        }
        self.clock = t_end;
        Ok(processed)
    }
}

/// Per-run knobs: seed for scenario construction, horizon, and the start-time shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon: SimTime,
    pub epoch_offset_s: f64,
}

impl RunConfig {
    pub fn new(seed: u64, horizon_s: f64, epoch_offset_s: f64) -> Result<Self, SimError> {
        let cfg = RunConfig {
            seed,
            horizon: SimTime(horizon_s),
            epoch_offset_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon.0 > 0.0 && self.horizon.0.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon.0
            )));
        }
        if !self.epoch_offset_s.is_finite() {
            return Err(SimError::InvalidConfig("epoch offset must be finite".into()));
        }
        Ok(())
    }
}
