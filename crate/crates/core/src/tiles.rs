//! Replicated compute tiles: request polling, execution, replies, state
//! sync after a reload, and scripted (possibly Byzantine) behaviors.

use serde::{Deserialize, Serialize};

use crate::app::{AppKind, ApplicationState};
use crate::kernel::Cycle;
use crate::platform::{Digest, EntityId, Platform, RegionId};
use crate::wire::{LogEntry, ReplyMessage, RequestMessage, StateHeader};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TileStatus {
    Empty,
    Loading,
    Ready,
    Active,
    Flushed,
}

impl TileStatus {
    /// Legal lifecycle edges. A flush may interrupt a load or a ready tile.
    pub fn can_become(self, next: TileStatus) -> bool {
        use TileStatus::*;
        matches!(
            (self, next),
            (Empty, Loading)
                | (Loading, Ready)
                | (Ready, Active)
                | (Active, Flushed)
                | (Ready, Flushed)
                | (Loading, Flushed)
                | (Flushed, Loading)
        )
    }
}

/// A scripted tile behavior. `Correct` follows the protocol exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Correct,
    /// Stops executing and replying.
    Crash,
    Slow {
        extra_cycles: u64,
    },
    WrongOutput {
        mask: Vec<u8>,
    },
    BadDigest,
    WrongUid,
    /// Executes but never replies.
    Silent,
    TamperPlmc,
    TamperPeer {
        peer: u16,
    },
    StaleReplay,
}

impl Behavior {
    /// Whether the tile withholds its reply and its Ready signal.
    pub fn is_mute(&self) -> bool {
        matches!(self, Behavior::Crash | Behavior::Silent)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Correct => "correct",
            Behavior::Crash => "crash",
            Behavior::Slow { .. } => "slow",
            Behavior::WrongOutput { .. } => "wrong_output",
            Behavior::BadDigest => "bad_digest",
            Behavior::WrongUid => "wrong_uid",
            Behavior::Silent => "silent",
            Behavior::TamperPlmc => "tamper_plmc",
            Behavior::TamperPeer { .. } => "tamper_peer",
            Behavior::StaleReplay => "stale_replay",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileDescriptor {
    pub tid: u16,
    pub slot: u16,
    pub softcore: String,
    pub version: String,
    /// Position of `version` in the configured version list.
    pub version_index: usize,
    pub status: TileStatus,
    pub app_state: ApplicationState,
    pub last_executed: Option<u64>,
    /// Last reply this tile wrote, kept for replay scripts.
    pub last_reply: Option<ReplyMessage>,
    /// Incremented on every load; events from older epochs are stale.
    pub epoch: u64,
}

impl TileDescriptor {
    pub fn empty(slot: u16, app: AppKind) -> Self {
        TileDescriptor {
            tid: slot,
            slot,
            softcore: String::new(),
            version: String::new(),
            version_index: 0,
            status: TileStatus::Empty,
            app_state: ApplicationState::genesis(app),
            last_executed: None,
            last_reply: None,
            epoch: 0,
        }
    }

    /// Moves along the lifecycle; panics on an illegal edge.
    pub fn set_status(&mut self, next: TileStatus) {
        assert!(self.status.can_become(next), "tile {}: illegal transition {:?} -> {:?}", self.tid, self.status, next);
        self.status = next;
    }

    /// Starts a load of `softcore`/`version`: private state is wiped.
    pub fn begin_load(&mut self, softcore: &str, version: &str, version_index: usize) {
        if matches!(self.status, TileStatus::Active | TileStatus::Ready | TileStatus::Loading) {
            self.set_status(TileStatus::Flushed);
        }
        self.set_status(TileStatus::Loading);
        self.softcore = softcore.to_string();
        self.version = version.to_string();
        self.version_index = version_index;
        self.app_state = ApplicationState::genesis(self.app_state.kind);
        self.last_executed = None;
        self.last_reply = None;
        self.epoch += 1;
    }

    pub fn flush(&mut self) {
        if matches!(self.status, TileStatus::Active | TileStatus::Ready | TileStatus::Loading) {
            self.set_status(TileStatus::Flushed);
        }
        self.epoch += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PollReject {
    Malformed,
    BadDigest,
    Stale,
    Dropped,
}

/// Reads the request for `uid` from the controller memory. `transit` may
/// corrupt the payload or drop the message (returning false).
///
/// Returns the accepted message (or the reason it was ignored) and the
/// number of bytes read.
pub fn tile_poll<T>(
    platform: &mut Platform,
    now: Cycle,
    tile: &TileDescriptor,
    uid: u64,
    hashing: bool,
    transit: T,
) -> (Result<RequestMessage, PollReject>, usize)
where
    T: FnOnce(&mut Vec<u8>) -> bool,
{
    let who = EntityId::tile(tile.tid);
    let layout = platform.layout();
    let off = layout.slot_offset(uid);
    let Ok(head) = platform.mem_read(now, who, RegionId::PlmC, off, RequestMessage::HEADER) else {
        return (Err(PollReject::Malformed), 0);
    };
    let len = RequestMessage::payload_len(&head).unwrap_or(0).min(layout.slot_size - RequestMessage::HEADER);
    let Ok(bytes) = platform.mem_read(now, who, RegionId::PlmC, off, RequestMessage::HEADER + len) else {
        return (Err(PollReject::Malformed), 0);
    };
    let read = bytes.len();
    let Ok(mut m) = RequestMessage::decode(&bytes) else {
        return (Err(PollReject::Malformed), read);
    };
    if !transit(&mut m.req) {
        return (Err(PollReject::Dropped), read);
    }
    if hashing && !m.verifies() {
        return (Err(PollReject::BadDigest), read);
    }
    if m.uid != uid || tile.last_executed.is_some_and(|l| m.uid <= l) {
        return (Err(PollReject::Stale), read);
    }
    (Ok(m), read)
}

/// Executes an accepted request; the state advances and the reply is
/// returned, transformed by `behavior` where it scripts wrong output.
pub fn tile_execute(tile: &mut TileDescriptor, m: &RequestMessage, behavior: &Behavior) -> Vec<u8> {
    let mut rep = tile.app_state.apply(&m.req);
    tile.last_executed = Some(m.uid);
    if let Behavior::WrongOutput { mask } = behavior {
        let mask: &[u8] = if mask.iter().all(|b| *b == 0) { &[0x01] } else { mask };
        if rep.is_empty() {
            rep.push(0);
        }
        for (i, b) in rep.iter_mut().enumerate() {
            *b ^= mask[i % mask.len()];
        }
    }
    rep
}

/// Writes the reply for `uid` into the tile's own memory, after any
/// scripted tamper attempt. Returns the number of reply bytes written, or
/// `None` when nothing was written.
pub fn tile_reply(
    platform: &mut Platform,
    now: Cycle,
    tile: &mut TileDescriptor,
    uid: u64,
    rep: Vec<u8>,
    hashing: bool,
    behavior: &Behavior,
) -> Option<usize> {
    let who = EntityId::tile(tile.tid);
    let layout = platform.layout();
    let off = layout.slot_offset(uid);
    let honest = ReplyMessage::new(uid, rep, tile.tid, hashing);
    let msg = match behavior {
        Behavior::Crash | Behavior::Silent => return None,
        Behavior::TamperPlmc => {
            // forge a request in the next slot; the platform must deny it
            let forged = RequestMessage::new(uid + 1, b"forged".to_vec(), hashing).encode();
            let _ = platform.mem_write(now, who, RegionId::PlmC, layout.slot_offset(uid + 1), &forged);
            honest.clone()
        }
        Behavior::TamperPeer { peer } => {
            let spoof = ReplyMessage::new(uid, honest.rep.clone(), *peer, hashing).encode();
            let _ = platform.mem_write(now, who, RegionId::PlmTile(*peer), off, &spoof);
            honest.clone()
        }
        Behavior::BadDigest => {
            let mut r = honest.clone();
            r.rep_digest.0[0] ^= 0xff;
            r
        }
        Behavior::WrongUid => ReplyMessage { uid: uid + layout.checkpoint_max as u64, ..honest.clone() },
        Behavior::StaleReplay => tile.last_reply.clone()?,
        _ => honest.clone(),
    };
    let bytes = msg.encode();
    platform.mem_write(now, who, RegionId::PlmTile(tile.tid), off, &bytes).ok()?;
    tile.last_reply = Some(honest);
    Some(bytes.len())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncOutcome {
    Synced(Digest),
    NothingToSync,
    /// The synced state did not verify; the tile stays silent.
    Failed,
}

/// Memory traffic of one sync, for cost accounting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SyncTraffic {
    /// Bytes of each transfer, in order.
    pub transfers: Vec<usize>,
    pub replayed: u64,
}

/// Rebuilds a freshly loaded tile's state from the controller memory: the
/// header gives the next uid and the checkpoint; stateful apps then replay
/// the live log, checking every logged reply and the chain digest.
pub fn tile_state_sync(platform: &mut Platform, now: Cycle, tile: &mut TileDescriptor, stateful: bool) -> (SyncOutcome, SyncTraffic) {
    let who = EntityId::tile(tile.tid);
    let layout = platform.layout();
    let mut traffic = SyncTraffic::default();
    let hoff = layout.header_offset();
    let header = platform
        .mem_read(now, who, RegionId::PlmC, hoff, StateHeader::FIXED)
        .ok()
        .and_then(|fixed| StateHeader::total_len(&fixed).ok())
        .filter(|total| hoff + total <= layout.controller_capacity())
        .and_then(|total| platform.mem_read(now, who, RegionId::PlmC, hoff, total).ok())
        .and_then(|b| {
            traffic.transfers.push(b.len());
            StateHeader::decode(&b).ok()
        });
    let Some(header) = header else {
        return (SyncOutcome::Failed, traffic);
    };
    tile.last_executed = header.next_uid.checked_sub(1);
    let kind = tile.app_state.kind;
    if !stateful || !kind.is_stateful() {
        return (SyncOutcome::NothingToSync, traffic);
    }
    let cp = header.checkpoint.clone().unwrap_or_else(crate::platform::Checkpoint::genesis);
    let mut state = ApplicationState::restore(kind, &cp.state);
    let mut chain = cp.chain;
    for i in 0..header.log_count as usize {
        let off = layout.log_offset(i);
        let entry = platform
            .mem_read(now, who, RegionId::PlmC, off, LogEntry::HEADER)
            .ok()
            .map(|h| {
                let rl = u32::from_le_bytes(h[8..12].try_into().unwrap()) as usize;
                let pl = u32::from_le_bytes(h[12..16].try_into().unwrap()) as usize;
                (LogEntry::HEADER + rl + pl).min(layout.slot_size)
            })
            .and_then(|len| platform.mem_read(now, who, RegionId::PlmC, off, len).ok())
            .and_then(|b| {
                traffic.transfers.push(b.len());
                LogEntry::decode(&b).ok()
            });
        let Some(entry) = entry else {
            return (SyncOutcome::Failed, traffic);
        };
        traffic.replayed += 1;
        if state.apply(&entry.req) != entry.rep {
            return (SyncOutcome::Failed, traffic);
        }
        chain = entry.chain(&chain);
    }
    if chain != header.chain {
        return (SyncOutcome::Failed, traffic);
    }
    tile.app_state = state;
    (SyncOutcome::Synced(tile.app_state.state_digest()), traffic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RateLimit;
    use crate::controller::{Controller, Status};
    use crate::platform::Layout;

    fn setup(app: AppKind) -> (Platform, Controller, TileDescriptor) {
        let p = Platform::new(Layout { slot_size: 256, checkpoint_max: 8 }, 3, 1);
        let mut c = Controller::new(8, true, RateLimit::default());
        c.status = Status::Ready;
        let mut t = TileDescriptor::empty(1, app);
        t.begin_load("mb", "v1", 0);
        t.set_status(TileStatus::Ready);
        t.set_status(TileStatus::Active);
        (p, c, t)
    }

    #[test]
    fn lifecycle_edges() {
        use TileStatus::*;
        assert!(Empty.can_become(Loading));
        assert!(!Empty.can_become(Active));
        assert!(!Active.can_become(Loading));
        assert!(Flushed.can_become(Loading));
    }

    #[test]
    fn poll_accepts_fresh_and_ignores_replayed_uid() {
        let (mut p, mut c, mut t) = setup(AppKind::NullOp);
        c.issue_request(&mut p, Cycle(0), b"hi".to_vec()).unwrap();
        let (m, _) = tile_poll(&mut p, Cycle(1), &t, 0, true, |_| true);
        let m = m.unwrap();
        tile_execute(&mut t, &m, &Behavior::Correct);
        assert_eq!(tile_poll(&mut p, Cycle(2), &t, 0, true, |_| true).0, Err(PollReject::Stale));
    }

    #[test]
    fn poll_rejects_corruption_when_hashing() {
        let (mut p, mut c, t) = setup(AppKind::NullOp);
        c.issue_request(&mut p, Cycle(0), b"hi".to_vec()).unwrap();
        let flip = |r: &mut Vec<u8>| {
            r[0] ^= 1;
            true
        };
        assert_eq!(tile_poll(&mut p, Cycle(1), &t, 0, true, flip).0, Err(PollReject::BadDigest));
    }

    #[test]
    fn wrong_output_differs_from_oracle() {
        let (_, _, mut t) = setup(AppKind::Counter);
        t.app_state = ApplicationState::restore(AppKind::Counter, b"10");
        let m = RequestMessage::new(0, b"+5".to_vec(), true);
        let rep = tile_execute(&mut t, &m, &Behavior::WrongOutput { mask: vec![0x20] });
        let mut oracle = ApplicationState::restore(AppKind::Counter, b"10");
        assert_ne!(rep, oracle.apply(b"+5"));
        assert_eq!(t.app_state.snapshot(), b"15");
    }

    #[test]
    fn tamper_peer_is_denied_but_reply_written() {
        let (mut p, mut c, mut t) = setup(AppKind::NullOp);
        c.issue_request(&mut p, Cycle(0), b"hi".to_vec()).unwrap();
        let written = tile_reply(&mut p, Cycle(1), &mut t, 0, vec![6], true, &Behavior::TamperPeer { peer: 2 });
        assert!(written.is_some());
        assert_eq!(p.violations(), 1);
        assert!(p.region(RegionId::PlmTile(2)).unwrap().is_zeroed());
        assert_eq!(c.collect_reply(&mut p, Cycle(2), 1, 0, |_| true).0, crate::controller::ReplyOutcome::Counted);
    }

    #[test]
    fn scripted_replies_are_rejected() {
        use crate::controller::ReplyOutcome::*;
        for (b, expect) in [(Behavior::BadDigest, RejectedBadDigest), (Behavior::WrongUid, RejectedWrongUid)] {
            let (mut p, mut c, mut t) = setup(AppKind::NullOp);
            c.issue_request(&mut p, Cycle(0), b"hi".to_vec()).unwrap();
            tile_reply(&mut p, Cycle(1), &mut t, 0, vec![6], true, &b).unwrap();
            assert_eq!(c.collect_reply(&mut p, Cycle(2), 1, 0, |_| true).0, expect);
        }
    }

    #[test]
    fn stale_replay_is_rejected() {
        let (mut p, mut c, mut t) = setup(AppKind::NullOp);
        c.issue_request(&mut p, Cycle(0), b"a".to_vec()).unwrap();
        tile_reply(&mut p, Cycle(1), &mut t, 0, vec![6], true, &Behavior::Correct).unwrap();
        c.inflight = None;
        c.issue_request(&mut p, Cycle(2), b"b".to_vec()).unwrap();
        tile_reply(&mut p, Cycle(3), &mut t, 1, vec![6], true, &Behavior::StaleReplay).unwrap();
        assert_eq!(c.collect_reply(&mut p, Cycle(4), 1, 1, |_| true).0, crate::controller::ReplyOutcome::RejectedWrongUid);
    }

    #[test]
    fn sync_replays_log() {
        let (mut p, mut c, mut t) = setup(AppKind::Counter);
        let mut oracle = ApplicationState::genesis(AppKind::Counter);
        for (uid, req) in [b"+40".as_slice(), b"+5", b"-3"].iter().enumerate() {
            let rep = oracle.apply(req);
            c.next_uid = uid as u64 + 1;
            c.record_delivery(&mut p, Cycle(0), uid as u64, req, &rep, true).unwrap();
        }
        t.begin_load("mb", "v2", 1);
        let (out, traffic) = tile_state_sync(&mut p, Cycle(1), &mut t, true);
        assert_eq!(out, SyncOutcome::Synced(oracle.state_digest()));
        assert_eq!(traffic.replayed, 3);
        assert_eq!(t.last_executed, Some(2));
    }

    #[test]
    fn sync_after_checkpoint_uses_snapshot() {
        let (mut p, mut c, mut t) = setup(AppKind::HashChain);
        let mut oracle = ApplicationState::genesis(AppKind::HashChain);
        for uid in 0..11u64 {
            let req = uid.to_le_bytes();
            let rep = oracle.apply(&req);
            c.next_uid = uid + 1;
            c.record_delivery(&mut p, Cycle(0), uid, &req, &rep, true).unwrap();
            c.maybe_checkpoint(&mut p, Cycle(0));
        }
        assert_eq!(c.log_count(), 3);
        t.begin_load("mb", "v1", 0);
        let (out, _) = tile_state_sync(&mut p, Cycle(1), &mut t, true);
        assert_eq!(out, SyncOutcome::Synced(oracle.state_digest()));
    }

    #[test]
    fn stateless_sync_only_learns_uid() {
        let (mut p, mut c, mut t) = setup(AppKind::NullOp);
        c.next_uid = 7;
        c.write_header(&mut p, Cycle(0)).unwrap();
        t.begin_load("mb", "v1", 0);
        assert_eq!(tile_state_sync(&mut p, Cycle(1), &mut t, false).0, SyncOutcome::NothingToSync);
        assert_eq!(t.last_executed, Some(6));
    }
}
