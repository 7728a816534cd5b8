//! Byte layouts of the records exchanged through the PL memories.
//!
//! All integers are little endian.
//!
//! ```text
//! request  : uid u64 | len u32 | digest [32] | req[len]
//! reply    : uid u64 | tid u32 | len u32 | digest [32] | rep[len]
//! log entry: uid u64 | req_len u32 | rep_len u32 | req | rep
//! header   : magic u32 | next_uid u64 | log_count u32 | cp_present u8 | cp_last_uid u64
//!            | cp_delivered u64 | cp_chain [32] | chain [32] | state_len u32 | state
//!            | header digest [32]
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::platform::{digest, digest_parts, Checkpoint, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("record truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("record does not fit a {slot}-byte slot ({len} bytes)")]
    TooLarge { len: usize, slot: usize },
    #[error("header magic missing")]
    NoHeader,
    #[error("header digest mismatch")]
    HeaderDigest,
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn need(b: &[u8], n: usize) -> Result<(), WireError> {
    if b.len() < n {
        Err(WireError::Truncated { need: n, have: b.len() })
    } else {
        Ok(())
    }
}

/// m = (uid, req, H(req)).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMessage {
    pub uid: u64,
    pub req: Vec<u8>,
    pub req_digest: Digest,
}

impl RequestMessage {
    pub const HEADER: usize = 44;

    /// Builds m; with `hashing` off the digest is the all-zero sentinel.
    pub fn new(uid: u64, req: Vec<u8>, hashing: bool) -> Self {
        let req_digest = if hashing { digest(&req) } else { Digest::ZERO };
        RequestMessage { uid, req, req_digest }
    }

    pub fn wire_len(&self) -> usize {
        Self::HEADER + self.req.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.uid.to_le_bytes());
        out.extend_from_slice(&(self.req.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.req_digest.0);
        out.extend_from_slice(&self.req);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        need(b, Self::HEADER)?;
        let len = u32_at(b, 8) as usize;
        need(b, Self::HEADER + len)?;
        Ok(RequestMessage {
            uid: u64_at(b, 0),
            req: b[Self::HEADER..Self::HEADER + len].to_vec(),
            req_digest: Digest(b[12..44].try_into().unwrap()),
        })
    }

    /// Length field of an encoded header, used to size the second read.
    pub fn payload_len(header: &[u8]) -> Result<usize, WireError> {
        need(header, Self::HEADER)?;
        Ok(u32_at(header, 8) as usize)
    }

    pub fn verifies(&self) -> bool {
        self.req_digest == digest(&self.req)
    }
}

/// r = (uid, rep, H(rep), tid).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyMessage {
    pub uid: u64,
    pub rep: Vec<u8>,
    pub rep_digest: Digest,
    pub tid: u16,
}

impl ReplyMessage {
    pub const HEADER: usize = 48;

    pub fn new(uid: u64, rep: Vec<u8>, tid: u16, hashing: bool) -> Self {
        let rep_digest = if hashing { digest(&rep) } else { Digest::ZERO };
        ReplyMessage { uid, rep, rep_digest, tid }
    }

    pub fn wire_len(&self) -> usize {
        Self::HEADER + self.rep.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.uid.to_le_bytes());
        out.extend_from_slice(&(self.tid as u32).to_le_bytes());
        out.extend_from_slice(&(self.rep.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.rep_digest.0);
        out.extend_from_slice(&self.rep);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        need(b, Self::HEADER)?;
        let len = u32_at(b, 12) as usize;
        need(b, Self::HEADER + len)?;
        Ok(ReplyMessage {
            uid: u64_at(b, 0),
            tid: u32_at(b, 8) as u16,
            rep: b[Self::HEADER..Self::HEADER + len].to_vec(),
            rep_digest: Digest(b[16..48].try_into().unwrap()),
        })
    }

    pub fn payload_len(header: &[u8]) -> Result<usize, WireError> {
        need(header, Self::HEADER)?;
        Ok(u32_at(header, 12) as usize)
    }

    pub fn verifies(&self) -> bool {
        self.rep_digest == digest(&self.rep)
    }
}

/// A delivered req|rep pair retained in controller memory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub uid: u64,
    pub req: Vec<u8>,
    pub rep: Vec<u8>,
}

impl LogEntry {
    pub const HEADER: usize = 16;

    pub fn wire_len(&self) -> usize {
        Self::HEADER + self.req.len() + self.rep.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.uid.to_le_bytes());
        out.extend_from_slice(&(self.req.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.rep.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.req);
        out.extend_from_slice(&self.rep);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        need(b, Self::HEADER)?;
        let rl = u32_at(b, 8) as usize;
        let pl = u32_at(b, 12) as usize;
        need(b, Self::HEADER + rl + pl)?;
        Ok(LogEntry { uid: u64_at(b, 0), req: b[16..16 + rl].to_vec(), rep: b[16 + rl..16 + rl + pl].to_vec() })
    }

    /// Extends a running chain digest with this entry.
    pub fn chain(&self, prev: &Digest) -> Digest {
        digest_parts([&prev.0[..], &self.uid.to_le_bytes()[..], &self.req[..], &self.rep[..]])
    }
}

/// Controller-maintained header describing the replicated state: the next
/// uid, the live log length, the last checkpoint and the running chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateHeader {
    pub next_uid: u64,
    pub log_count: u32,
    pub checkpoint: Option<Checkpoint>,
    /// Chain digest after the last live log entry.
    pub chain: Digest,
}

impl StateHeader {
    const MAGIC: u32 = 0x5148_4452;
    pub const FIXED: usize = 4 + 8 + 4 + 1 + 8 + 8 + 32 + 32 + 4;

    pub fn wire_len(&self) -> usize {
        Self::FIXED + self.checkpoint.as_ref().map_or(0, |c| c.state.len()) + 32
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&Self::MAGIC.to_le_bytes());
        out.extend_from_slice(&self.next_uid.to_le_bytes());
        out.extend_from_slice(&self.log_count.to_le_bytes());
        match &self.checkpoint {
            Some(cp) => {
                out.push(if cp.last_uid.is_some() { 2 } else { 1 });
                out.extend_from_slice(&cp.last_uid.unwrap_or(0).to_le_bytes());
                out.extend_from_slice(&cp.delivered.to_le_bytes());
                out.extend_from_slice(&cp.chain.0);
                out.extend_from_slice(&self.chain.0);
                out.extend_from_slice(&(cp.state.len() as u32).to_le_bytes());
                out.extend_from_slice(&cp.state);
            }
            None => {
                out.push(0);
                out.extend_from_slice(&[0; 16]);
                out.extend_from_slice(&[0; 32]);
                out.extend_from_slice(&self.chain.0);
                out.extend_from_slice(&0u32.to_le_bytes());
            }
        }
        let d = digest(&out);
        out.extend_from_slice(&d.0);
        out
    }

    /// Length of the whole header given its fixed part.
    pub fn total_len(fixed: &[u8]) -> Result<usize, WireError> {
        need(fixed, Self::FIXED)?;
        Ok(Self::FIXED + u32_at(fixed, Self::FIXED - 4) as usize + 32)
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        need(b, Self::FIXED)?;
        if u32_at(b, 0) != Self::MAGIC {
            return Err(WireError::NoHeader);
        }
        let total = Self::total_len(b)?;
        need(b, total)?;
        if digest(&b[..total - 32]) != Digest(b[total - 32..total].try_into().unwrap()) {
            return Err(WireError::HeaderDigest);
        }
        let next_uid = u64_at(b, 4);
        let log_count = u32_at(b, 12);
        let flag = b[16];
        let chain = Digest(b[65..97].try_into().unwrap());
        let state_len = u32_at(b, 97) as usize;
        let checkpoint = match flag {
            0 => None,
            _ => Some(Checkpoint {
                last_uid: (flag == 2).then(|| u64_at(b, 17)),
                delivered: u64_at(b, 25),
                chain: Digest(b[33..65].try_into().unwrap()),
                state: b[Self::FIXED..Self::FIXED + state_len].to_vec(),
            }),
        };
        Ok(StateHeader { next_uid, log_count, checkpoint, chain })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn request_roundtrip(uid in any::<u64>(), req in proptest::collection::vec(any::<u8>(), 0..600), h in any::<bool>()) {
            let m = RequestMessage::new(uid, req, h);
            prop_assert_eq!(RequestMessage::decode(&m.encode()).unwrap(), m);
        }

        #[test]
        fn reply_roundtrip(uid in any::<u64>(), rep in proptest::collection::vec(any::<u8>(), 0..600), tid in 0u16..64) {
            let r = ReplyMessage::new(uid, rep, tid, true);
            let d = ReplyMessage::decode(&r.encode()).unwrap();
            prop_assert!(d.verifies());
            prop_assert_eq!(d, r);
        }
    }

    #[test]
    fn disabled_hashing_uses_zero_sentinel() {
        assert_eq!(RequestMessage::new(0, b"x".to_vec(), false).req_digest, Digest::ZERO);
    }

    #[test]
    fn header_roundtrip_and_tamper_detection() {
        let h = StateHeader {
            next_uid: 42,
            log_count: 3,
            checkpoint: Some(Checkpoint { last_uid: Some(38), delivered: 39, chain: digest(b"c"), state: b"120".to_vec() }),
            chain: digest(b"d"),
        };
        let mut bytes = h.encode();
        assert_eq!(StateHeader::decode(&bytes).unwrap(), h);
        bytes[5] ^= 1;
        assert_eq!(StateHeader::decode(&bytes), Err(WireError::HeaderDigest));
        assert_eq!(StateHeader::decode(&[0u8; 200]), Err(WireError::NoHeader));
    }

    #[test]
    fn header_without_checkpoint() {
        let h = StateHeader { next_uid: 0, log_count: 0, checkpoint: None, chain: Digest::ZERO };
        assert_eq!(StateHeader::decode(&h.encode()).unwrap(), h);
        let genesis = StateHeader { checkpoint: Some(Checkpoint::genesis()), ..h };
        assert_eq!(StateHeader::decode(&genesis.encode()).unwrap(), genesis);
    }

    #[test]
    fn truncated_reply() {
        let r = ReplyMessage::new(1, vec![1, 2, 3], 0, true).encode();
        assert!(matches!(ReplyMessage::decode(&r[..50]), Err(WireError::Truncated { .. })));
    }
}
