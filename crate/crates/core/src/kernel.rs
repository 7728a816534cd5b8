//! Discrete-event kernel: a global cycle clock, an ordered event queue, timers
//! and a running digest over the dispatched event trace.
//!
//! Events scheduled for the same cycle are dispatched in insertion order. The
//! kernel is single threaded; a run is a pure function of the calls made on it.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::platform::EntityId;

/// A count of simulated clock cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cycle(pub u64);

impl Cycle {
    pub const ZERO: Cycle = Cycle(0);

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: Cycle) -> Cycle {
        Cycle(self.0.saturating_sub(other.0))
    }
}

impl Add for Cycle {
    type Output = Cycle;
    fn add(self, rhs: Cycle) -> Cycle {
        Cycle(self.0 + rhs.0)
    }
}

impl Add<u64> for Cycle {
    type Output = Cycle;
    fn add(self, rhs: u64) -> Cycle {
        Cycle(self.0 + rhs)
    }
}

impl AddAssign<u64> for Cycle {
    fn add_assign(&mut self, rhs: u64) {
        self.0 += rhs;
    }
}

impl Sub for Cycle {
    type Output = u64;
    fn sub(self, rhs: Cycle) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimerId(pub u64);

/// A scheduled event. `seq` is the insertion counter used to break ties.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event<E> {
    pub at: Cycle,
    pub target: EntityId,
    pub seq: u64,
    pub timer: Option<TimerId>,
    pub body: E,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Timer {
    pub id: TimerId,
    pub owner: EntityId,
    pub expiry: Cycle,
    pub armed: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled at cycle {at} but the clock is already at {now}")]
    PastDeadline { at: Cycle, now: Cycle },
    #[error("run exhausted {max_cycles} cycles without reaching its goal")]
    Exhausted { max_cycles: Cycle, state: RunState },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    PredicateSatisfied,
    Exhausted,
}

/// Summary of a finished (or exhausted) run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunState {
    pub clock: Cycle,
    pub dispatched: u64,
    pub reason: Termination,
    pub trace_digest: [u8; 32],
}

/// Anything driven by the kernel. Handlers may schedule more events.
pub trait World<E> {
    fn handle(&mut self, kernel: &mut Kernel<E>, event: Event<E>);
}

struct Queued<E> {
    at: Cycle,
    seq: u64,
    event: Event<E>,
}

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<E> Eq for Queued<E> {}
impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Queued<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct Kernel<E> {
    clock: Cycle,
    next_seq: u64,
    next_timer: u64,
    queue: BinaryHeap<Reverse<Queued<E>>>,
    cancelled: BTreeSet<TimerId>,
    live_timers: BTreeSet<TimerId>,
    dispatched: u64,
    hasher: Sha256,
}

impl<E: Serialize> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Serialize> Kernel<E> {
    pub fn new() -> Self {
        Kernel {
            clock: Cycle::ZERO,
            next_seq: 0,
            next_timer: 0,
            queue: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            live_timers: BTreeSet::new(),
            dispatched: 0,
            hasher: Sha256::new(),
        }
    }

    pub fn now(&self) -> Cycle {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(&mut self, at: Cycle, target: EntityId, body: E) -> Result<EventId, KernelError> {
        self.push(at, target, None, body)
    }

    /// Schedules `body` `delay` cycles from now. Never fails.
    pub fn schedule_in(&mut self, delay: u64, target: EntityId, body: E) -> EventId {
        let at = self.clock + delay;
        self.push(at, target, None, body).expect("relative schedule cannot be in the past")
    }

    fn push(&mut self, at: Cycle, target: EntityId, timer: Option<TimerId>, body: E) -> Result<EventId, KernelError> {
        if at < self.clock {
            return Err(KernelError::PastDeadline { at, now: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { at, seq, event: Event { at, target, seq, timer, body } }));
        Ok(EventId(seq))
    }

    /// Arms a timer that delivers `body` to `owner` at exactly `expiry`.
    pub fn arm_timer(&mut self, owner: EntityId, expiry: Cycle, body: E) -> Result<Timer, KernelError> {
        let id = TimerId(self.next_timer);
        self.next_timer += 1;
        self.push(expiry, owner, Some(id), body)?;
        self.live_timers.insert(id);
        Ok(Timer { id, owner, expiry, armed: true })
    }

    /// Cancels a timer. Returns false if it already fired or was cancelled.
    pub fn cancel_timer(&mut self, id: TimerId) -> bool {
        if self.live_timers.remove(&id) {
            self.cancelled.insert(id);
            true
        } else {
            false
        }
    }

    pub fn timer_armed(&self, id: TimerId) -> bool {
        self.live_timers.contains(&id)
    }

    /// Pops the next dispatchable event, advancing the clock. Cancelled timer
    /// events are discarded silently.
    pub fn next_event(&mut self) -> Option<Event<E>> {
        while let Some(Reverse(q)) = self.queue.pop() {
            if let Some(t) = q.event.timer {
                if self.cancelled.remove(&t) {
                    continue;
                }
                self.live_timers.remove(&t);
            }
            debug_assert!(q.at >= self.clock);
            self.clock = q.at;
            self.dispatched += 1;
            self.absorb(&q.event);
            return Some(q.event);
        }
        None
    }

    fn peek_at(&mut self) -> Option<Cycle> {
        loop {
            let top = self.queue.peek()?;
            let Reverse(q) = top;
            match q.event.timer {
                Some(t) if self.cancelled.contains(&t) => {
                    let Reverse(q) = self.queue.pop().unwrap();
                    self.cancelled.remove(&q.event.timer.unwrap());
                }
                _ => return Some(q.at),
            }
        }
    }

    fn absorb(&mut self, ev: &Event<E>) {
        self.hasher.update(ev.at.0.to_le_bytes());
        self.hasher.update(ev.seq.to_le_bytes());
        self.hasher.update([ev.target.kind as u8]);
        self.hasher.update(ev.target.index.to_le_bytes());
        let body = serde_json::to_vec(&ev.body).expect("event bodies serialize");
        self.hasher.update((body.len() as u64).to_le_bytes());
        self.hasher.update(&body);
    }

    pub fn trace_digest(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }

    fn state(&self, reason: Termination) -> RunState {
        RunState { clock: self.clock, dispatched: self.dispatched, reason, trace_digest: self.trace_digest() }
    }

    /// Dispatches events in timestamp order until `done(world)` holds or the
    /// next event lies beyond `max_cycles`. An exhausted run leaves the clock
    /// at `max_cycles`.
    pub fn run_until<W, P>(&mut self, world: &mut W, mut done: P, max_cycles: Cycle) -> Result<RunState, KernelError>
    where
        W: World<E>,
        P: FnMut(&W) -> bool,
    {
        loop {
            if done(world) {
                return Ok(self.state(Termination::PredicateSatisfied));
            }
            match self.peek_at() {
                Some(at) if at <= max_cycles => {
                    let ev = self.next_event().expect("peeked event present");
                    world.handle(self, ev);
                }
                _ => {
                    if self.clock < max_cycles {
                        self.clock = max_cycles;
                    }
                    return Err(KernelError::Exhausted { max_cycles, state: self.state(Termination::Exhausted) });
                }
            }
        }
    }
}
