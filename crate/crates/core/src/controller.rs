//! The trusted controller: admission, uid assignment, broadcast, reply
//! collection, the quorum decision, logging and checkpointing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::config::RateLimit;
use crate::kernel::{Cycle, TimerId};
use crate::platform::{Checkpoint, Digest, EntityId, MemError, Platform, RegionId};
use crate::wire::{LogEntry, ReplyMessage, RequestMessage, StateHeader};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Loading,
    Ready,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubmitOutcome {
    /// Accepted; the value is the number of requests queued ahead of it.
    Accepted(usize),
    RejectedNotReady,
    RejectedRateLimit,
}

#[derive(Clone, Debug, Default)]
struct AppWindow {
    last: Option<Cycle>,
    window_start: Cycle,
    count: u32,
}

/// A request accepted from an application and waiting to be issued.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pending {
    pub app: u16,
    pub payload: Vec<u8>,
    pub accepted_at: Cycle,
    /// Workload sequence number, when the request came from a workload.
    pub tag: Option<u64>,
}

/// Per-application admission control and fair FIFO queues. Admission runs
/// independently of the agreement path: nothing here touches vote sets.
#[derive(Clone, Debug)]
pub struct Admission {
    limit: RateLimit,
    windows: BTreeMap<u16, AppWindow>,
    queues: BTreeMap<u16, VecDeque<Pending>>,
    rr_last: Option<u16>,
}

impl Admission {
    pub fn new(limit: RateLimit) -> Self {
        Admission { limit, windows: BTreeMap::new(), queues: BTreeMap::new(), rr_last: None }
    }

    pub fn submit(&mut self, status: Status, app: u16, payload: Vec<u8>, now: Cycle, tag: Option<u64>) -> SubmitOutcome {
        if status == Status::Loading {
            return SubmitOutcome::RejectedNotReady;
        }
        let w = self.windows.entry(app).or_default();
        if let Some(last) = w.last {
            if now.0 - last.0 < self.limit.delta_min {
                return SubmitOutcome::RejectedRateLimit;
            }
        }
        if now.0 >= w.window_start.0 + self.limit.window || w.last.is_none() {
            w.window_start = now;
            w.count = 0;
        }
        if w.count >= self.limit.burst_max {
            return SubmitOutcome::RejectedRateLimit;
        }
        w.count += 1;
        w.last = Some(now);
        let ahead = self.len();
        self.queues.entry(app).or_default().push_back(Pending { app, payload, accepted_at: now, tag });
        SubmitOutcome::Accepted(ahead)
    }

    pub fn len(&self) -> usize {
        self.queues.values().map(|q| q.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Next request, serving applications round-robin.
    pub fn pop(&mut self) -> Option<Pending> {
        let apps: Vec<u16> = self.queues.iter().filter(|(_, q)| !q.is_empty()).map(|(a, _)| *a).collect();
        if apps.is_empty() {
            return None;
        }
        let next = match self.rr_last {
            Some(l) => apps.iter().copied().find(|a| *a > l).unwrap_or(apps[0]),
            None => apps[0],
        };
        self.rr_last = Some(next);
        self.queues.get_mut(&next).and_then(|q| q.pop_front())
    }

    /// Puts a request back at the head of its queue (it was not delivered).
    pub fn requeue_front(&mut self, p: Pending) {
        self.queues.entry(p.app).or_default().push_front(p);
    }
}

/// Outcome of reading one tile's reply slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplyOutcome {
    Counted,
    RejectedBadDigest,
    RejectedWrongUid,
    RejectedDuplicate,
    /// Read after the decision; traced, never counted.
    Late,
    /// Lost in transit.
    Dropped,
    Malformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DecisionKind {
    DeliverFull,
    DeliverPartialRejuv,
    FullRejuv,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    pub rep: Option<Vec<u8>>,
    pub matches: usize,
    pub suspects: BTreeSet<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteSet {
    pub uid: u64,
    pub req: Vec<u8>,
    pub replies: BTreeMap<u16, ReplyMessage>,
    pub timer: Option<TimerId>,
    pub decision: Option<Decision>,
    pub issued_at: Cycle,
}

impl VoteSet {
    pub fn new(uid: u64, req: Vec<u8>, issued_at: Cycle) -> Self {
        VoteSet { uid, req, replies: BTreeMap::new(), timer: None, decision: None, issued_at }
    }

    /// Largest class of byte-identical replies: (size, output, members).
    pub fn largest_class(&self) -> Option<(usize, Vec<u8>, BTreeSet<u16>)> {
        let mut classes: BTreeMap<&[u8], BTreeSet<u16>> = BTreeMap::new();
        for (tid, r) in &self.replies {
            classes.entry(&r.rep).or_default().insert(*tid);
        }
        classes
            .into_iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(rep, members)| (members.len(), rep.to_vec(), members))
    }
}

/// Quorum decision over `active` tiles tolerating `f` faults.
///
/// Before the timer expires a decision is taken only once every one of the
/// 2f+1 tiles has replied with the same output. At expiry the largest class
/// of matching outputs of size m decides: m ≥ 2f+1 delivers, f+1 ≤ m < 2f+1
/// delivers and rejuvenates the tiles outside the class, m < f+1 triggers a
/// full rejuvenation.
pub fn evaluate_votes(vs: &VoteSet, active: &BTreeSet<u16>, f: usize, at_expiry: bool) -> Option<Decision> {
    let quorum = 2 * f + 1;
    let (m, rep, members) = vs.largest_class().unwrap_or((0, Vec::new(), BTreeSet::new()));
    if m >= quorum {
        return Some(Decision { kind: DecisionKind::DeliverFull, rep: Some(rep), matches: m, suspects: BTreeSet::new() });
    }
    if !at_expiry {
        return None;
    }
    if m > f {
        let suspects = active.difference(&members).copied().collect();
        Some(Decision { kind: DecisionKind::DeliverPartialRejuv, rep: Some(rep), matches: m, suspects })
    } else {
        Some(Decision { kind: DecisionKind::FullRejuv, rep: None, matches: m, suspects: active.clone() })
    }
}

/// Decision record emitted as a JSON Lines object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub cycle: Cycle,
    pub uid: u64,
    pub kind: DecisionKind,
    pub matches: usize,
    pub suspects: Vec<u16>,
    pub delivered_digest: Option<String>,
}

pub struct Controller {
    pub status: Status,
    pub next_uid: u64,
    pub inflight: Option<VoteSet>,
    /// Live log since the last checkpoint.
    pub log: Vec<LogEntry>,
    pub chain: Digest,
    pub last_checkpoint: Checkpoint,
    pub delivered_total: u64,
    last_uid: Option<u64>,
    last_state: Vec<u8>,
    checkpoint_max: usize,
    hashing: bool,
    pub admission: Admission,
}

/// Memory traffic generated by a controller operation, in bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub written: usize,
    pub read: usize,
    pub transfers: u32,
}

impl Controller {
    pub fn new(checkpoint_max: usize, hashing: bool, limit: RateLimit) -> Self {
        Controller {
            status: Status::Loading,
            next_uid: 0,
            inflight: None,
            log: Vec::new(),
            chain: Digest::ZERO,
            last_checkpoint: Checkpoint::genesis(),
            delivered_total: 0,
            last_uid: None,
            last_state: Vec::new(),
            checkpoint_max,
            hashing,
            admission: Admission::new(limit),
        }
    }

    pub fn submit_request(&mut self, app: u16, payload: Vec<u8>, now: Cycle, tag: Option<u64>) -> SubmitOutcome {
        self.admission.submit(self.status, app, payload, now, tag)
    }

    pub fn log_count(&self) -> usize {
        self.log.len()
    }

    /// Assigns the next uid, writes m into its controller slot and opens a
    /// vote set. The caller arms the round timer.
    pub fn issue_request(&mut self, platform: &mut Platform, now: Cycle, req: Vec<u8>) -> Result<(RequestMessage, Traffic), MemError> {
        assert_eq!(self.status, Status::Ready, "requests are issued only when Ready");
        assert!(self.inflight.is_none(), "one request in flight at a time");
        let uid = self.next_uid;
        self.next_uid += 1;
        let m = RequestMessage::new(uid, req, self.hashing);
        let bytes = m.encode();
        let off = platform.layout().slot_offset(uid);
        platform.mem_write(now, EntityId::CONTROLLER, RegionId::PlmC, off, &bytes)?;
        self.inflight = Some(VoteSet::new(uid, m.req.clone(), now));
        Ok((m, Traffic { written: bytes.len(), read: 0, transfers: 1 }))
    }

    /// Reads tile `tid`'s reply slot for `uid`. `transit` may corrupt the
    /// payload in flight or drop it (returning false).
    pub fn collect_reply<T>(&mut self, platform: &mut Platform, now: Cycle, tid: u16, uid: u64, transit: T) -> (ReplyOutcome, Traffic)
    where
        T: FnOnce(&mut Vec<u8>) -> bool,
    {
        let layout = platform.layout();
        let off = layout.slot_offset(uid);
        let region = RegionId::PlmTile(tid);
        let header = match platform.mem_read(now, EntityId::CONTROLLER, region, off, ReplyMessage::HEADER) {
            Ok(h) => h,
            Err(_) => return (ReplyOutcome::Malformed, Traffic::default()),
        };
        let len = ReplyMessage::payload_len(&header).unwrap_or(0).min(layout.slot_size - ReplyMessage::HEADER);
        let bytes = match platform.mem_read(now, EntityId::CONTROLLER, region, off, ReplyMessage::HEADER + len) {
            Ok(b) => b,
            Err(_) => return (ReplyOutcome::Malformed, Traffic::default()),
        };
        let traffic = Traffic { written: 0, read: bytes.len(), transfers: 1 };
        let mut r = match ReplyMessage::decode(&bytes) {
            Ok(r) => r,
            Err(_) => return (ReplyOutcome::Malformed, traffic),
        };
        if !transit(&mut r.rep) {
            return (ReplyOutcome::Dropped, traffic);
        }
        let Some(vs) = self.inflight.as_mut().filter(|vs| vs.uid == uid) else {
            return (ReplyOutcome::Late, traffic);
        };
        if vs.decision.is_some() {
            return (ReplyOutcome::Late, traffic);
        }
        if self.hashing && !r.verifies() {
            return (ReplyOutcome::RejectedBadDigest, traffic);
        }
        if r.uid != uid || r.tid != tid {
            return (ReplyOutcome::RejectedWrongUid, traffic);
        }
        if vs.replies.contains_key(&tid) {
            return (ReplyOutcome::RejectedDuplicate, traffic);
        }
        vs.replies.insert(tid, r);
        (ReplyOutcome::Counted, traffic)
    }

    /// Appends a delivered req|rep pair to the log (stateful apps only) and
    /// refreshes the state header. Returns the bytes written.
    pub fn record_delivery(
        &mut self,
        platform: &mut Platform,
        now: Cycle,
        uid: u64,
        req: &[u8],
        rep: &[u8],
        stateful: bool,
    ) -> Result<Traffic, MemError> {
        self.delivered_total += 1;
        self.last_uid = Some(uid);
        if !stateful {
            return Ok(Traffic::default());
        }
        let entry = LogEntry { uid, req: req.to_vec(), rep: rep.to_vec() };
        self.chain = entry.chain(&self.chain);
        self.last_state = rep.to_vec();
        let bytes = entry.encode();
        let off = platform.layout().log_offset(self.log.len());
        platform.mem_write(now, EntityId::CONTROLLER, RegionId::PlmC, off, &bytes)?;
        self.log.push(entry);
        let h = self.write_header(platform, now)?;
        Ok(Traffic { written: bytes.len() + h, read: 0, transfers: 2 })
    }

    pub fn header(&self) -> StateHeader {
        StateHeader {
            next_uid: self.next_uid,
            log_count: self.log.len() as u32,
            checkpoint: Some(self.last_checkpoint.clone()),
            chain: self.chain,
        }
    }

    /// Writes the state header into controller memory; returns its length.
    pub fn write_header(&self, platform: &mut Platform, now: Cycle) -> Result<usize, MemError> {
        let bytes = self.header().encode();
        let off = platform.layout().header_offset();
        platform.mem_write(now, EntityId::CONTROLLER, RegionId::PlmC, off, &bytes)?;
        Ok(bytes.len())
    }

    /// Current checkpoint of everything delivered so far.
    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint { last_uid: self.last_uid, delivered: self.delivered_total, chain: self.chain, state: self.last_state.clone() }
    }

    /// Takes a checkpoint into SRAM and resets every PL memory once the log
    /// holds `checkpoint_max` entries.
    pub fn maybe_checkpoint(&mut self, platform: &mut Platform, now: Cycle) -> Option<Checkpoint> {
        if self.log.len() < self.checkpoint_max {
            return None;
        }
        Some(self.take_checkpoint(platform, now, true))
    }

    /// Stores a checkpoint in SRAM, clears the live log and (optionally)
    /// resets the PL memories, then rewrites the header.
    pub fn take_checkpoint(&mut self, platform: &mut Platform, now: Cycle, reset: bool) -> Checkpoint {
        let cp = self.snapshot();
        platform.checkpoint_store(now, EntityId::CONTROLLER, cp.clone()).expect("controller owns SRAM");
        self.last_checkpoint = cp.clone();
        self.log.clear();
        if reset {
            platform.reset_region(now, EntityId::CONTROLLER, RegionId::PlmC).expect("controller may reset");
            for s in 0..platform.slots() {
                platform.reset_region(now, EntityId::CONTROLLER, RegionId::PlmTile(s)).expect("controller may reset");
            }
            self.write_header(platform, now).expect("header fits");
        }
        cp
    }

    /// Restores the SRAM checkpoint into controller memory after a full
    /// reload wiped it.
    pub fn restore_state(&mut self, platform: &mut Platform, now: Cycle) -> Result<usize, MemError> {
        if let Some(cp) = platform.checkpoint_fetch(EntityId::CONTROLLER).expect("controller reads SRAM") {
            self.last_checkpoint = cp;
        }
        self.write_header(platform, now)
    }
}
