//! Deterministic discrete-event core: integer-microsecond clock, ordered
//! event queue, run loop.
//!
//! Events fire in `(fire_at, seq)` order, where `seq` is the scheduling
//! sequence number. Two events scheduled for the same instant therefore fire
//! in FIFO order, which makes runs reproducible without handler priorities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, AddAssign, Sub};

/// Simulation time in integer microseconds since simulation start.
///
/// One microsecond ticks keep slot durations (125 us) and packet
/// serialization times exactly representable, with no float drift.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Converts seconds to ticks, rounding to the nearest microsecond.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl std::fmt::Display for SimTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Handle returned by [`Engine::schedule`]; identifies the scheduled event.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EventHandle(pub u64);

/// Statistics returned by [`Engine::run_until`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunStats {
    pub events_processed: u64,
    pub final_time: SimTime,
}

/// Receives events popped by the run loop. Handlers may schedule further
/// events through the engine they are handed.
pub trait EventSink<E> {
    fn handle(&mut self, engine: &mut Engine<E>, at: SimTime, event: E);
}

struct Scheduled<E> {
    fire_at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse to pop the earliest (fire_at, seq).
        match other.fire_at.cmp(&self.fire_at) {
            Ordering::Equal => other.seq.cmp(&self.seq),
            ord => ord,
        }
    }
}

/// Single-threaded discrete-event engine.
///
/// One instance must never be shared across threads; parallelism exists only
/// across independent engine instances.
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Scheduled<E>>,
    events_processed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            events_processed: 0,
        }
    }

    /// Current simulation time, monotonically non-decreasing as observed by
    /// handlers.
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Schedules `event` to fire at `fire_at`.
    ///
    /// Scheduling in the past is a logic bug and panics. Scheduling at
    /// exactly `now()` is legal; the event fires in the current drain pass
    /// after already-queued events with the same timestamp.
    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={} now={}",
            fire_at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled {
            fire_at,
            seq,
            event,
        });
        EventHandle(seq)
    }

    /// Schedules `event` to fire `delay` after the current time.
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        self.schedule(self.now + delay, event)
    }

    /// Processes every event with `fire_at <= t_end` in `(fire_at, seq)`
    /// order, then advances the clock to `t_end`.
    pub fn run_until<S: EventSink<E>>(&mut self, t_end: SimTime, sink: &mut S) -> RunStats {
        assert!(t_end >= self.now, "run_until target precedes current time");
        while let Some(head) = self.queue.peek() {
            if head.fire_at > t_end {
                break;
            }
            let ev = self.queue.pop().expect("peeked event vanished");
            self.now = ev.fire_at;
            self.events_processed += 1;
            sink.handle(self, ev.fire_at, ev.event);
        }
        self.now = t_end;
        RunStats {
            events_processed: self.events_processed,
            final_time: self.now,
        }
    }
}
