//! Deterministic application state machines executed by the tiles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::platform::{digest, digest_parts, Digest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    NullOp,
    Counter,
    HashChain,
    VectorMultiply,
}

/// Single acknowledgement byte returned by the null operation.
pub const ACK: u8 = 0x06;

impl AppKind {
    /// Whether replies expose the full post-execution state. Stateful apps
    /// are the ones whose replies do; their state can be rebuilt from the
    /// last delivered reply.
    pub fn is_stateful(self) -> bool {
        matches!(self, AppKind::Counter | AppKind::HashChain)
    }

    /// A random request of roughly `size` bytes for this app.
    pub fn sample_request<R: Rng>(self, rng: &mut R, size: usize) -> Vec<u8> {
        match self {
            AppKind::NullOp => (0..size).map(|_| rng.gen()).collect(),
            AppKind::Counter => {
                let k: i64 = rng.gen_range(1..=1000);
                let sign = if rng.gen_bool(0.25) { '-' } else { '+' };
                format!("{sign}{k}").into_bytes()
            }
            AppKind::HashChain => (0..size.max(1)).map(|_| rng.gen()).collect(),
            AppKind::VectorMultiply => {
                let mut out = Vec::with_capacity(8 * 11);
                let scalar: f64 = rng.gen_range(-4.0..4.0);
                out.extend_from_slice(&scalar.to_le_bytes());
                for _ in 0..10 {
                    let x: f64 = rng.gen_range(-1000.0..1000.0);
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationState {
    pub kind: AppKind,
    state: Vec<u8>,
}

impl ApplicationState {
    pub fn genesis(kind: AppKind) -> Self {
        let state = match kind {
            AppKind::Counter => b"0".to_vec(),
            AppKind::HashChain => vec![0; 32],
            AppKind::NullOp | AppKind::VectorMultiply => Vec::new(),
        };
        ApplicationState { kind, state }
    }

    /// Rebuilds the state from a snapshot previously produced by
    /// [`ApplicationState::snapshot`]. An empty snapshot means genesis.
    pub fn restore(kind: AppKind, snapshot: &[u8]) -> Self {
        if snapshot.is_empty() || !kind.is_stateful() {
            return Self::genesis(kind);
        }
        ApplicationState { kind, state: snapshot.to_vec() }
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.state.clone()
    }

    pub fn state_digest(&self) -> Digest {
        digest_parts([&[self.kind as u8][..], &self.state[..]])
    }

    fn counter(&self) -> i64 {
        std::str::from_utf8(&self.state).ok().and_then(|s| s.parse().ok()).unwrap_or(0)
    }

    /// Executes one request, advancing the state and returning the reply.
    pub fn apply(&mut self, req: &[u8]) -> Vec<u8> {
        match self.kind {
            AppKind::NullOp => vec![ACK],
            AppKind::Counter => {
                let parsed = std::str::from_utf8(req).ok().and_then(|s| {
                    let (sign, digits) = s.split_at(1.min(s.len()));
                    let k: i64 = digits.parse().ok()?;
                    match sign {
                        "+" => Some(k),
                        "-" => Some(-k),
                        _ => None,
                    }
                });
                match parsed {
                    Some(delta) => {
                        let v = self.counter().wrapping_add(delta);
                        self.state = v.to_string().into_bytes();
                        self.state.clone()
                    }
                    None => self.state.clone(),
                }
            }
            AppKind::HashChain => {
                let mut buf = self.state.clone();
                buf.extend_from_slice(req);
                self.state = digest(&buf).0.to_vec();
                self.state.clone()
            }
            AppKind::VectorMultiply => {
                if req.len() < 8 {
                    return Vec::new();
                }
                let scalar = f64::from_le_bytes(req[..8].try_into().unwrap());
                req[8..].chunks_exact(8).flat_map(|c| (f64::from_le_bytes(c.try_into().unwrap()) * scalar).to_le_bytes()).collect()
            }
        }
    }

    /// Number of vector elements in a request, for cost accounting.
    pub fn elements(req: &[u8]) -> u64 {
        (req.len().saturating_sub(8) / 8) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_op_acks() {
        let mut s = ApplicationState::genesis(AppKind::NullOp);
        assert_eq!(s.apply(b"anything"), vec![ACK]);
    }

    #[test]
    fn counter_arithmetic() {
        let mut s = ApplicationState::restore(AppKind::Counter, b"10");
        assert_eq!(s.apply(b"+5"), b"15");
        assert_eq!(s.snapshot(), b"15");
        assert_eq!(s.apply(b"-20"), b"-5");
        assert_eq!(s.apply(b"junk"), b"-5");
    }

    #[test]
    fn hash_chain_is_deterministic() {
        let mut a = ApplicationState::genesis(AppKind::HashChain);
        let mut b = ApplicationState::genesis(AppKind::HashChain);
        for r in [&b"a"[..], b"bc", b""] {
            assert_eq!(a.apply(r), b.apply(r));
        }
        assert_eq!(a.state_digest(), b.state_digest());
        let restored = ApplicationState::restore(AppKind::HashChain, &a.snapshot());
        assert_eq!(restored, a);
    }

    #[test]
    fn vector_multiply() {
        let mut s = ApplicationState::genesis(AppKind::VectorMultiply);
        let mut req = 2.0f64.to_le_bytes().to_vec();
        req.extend_from_slice(&1.5f64.to_le_bytes());
        req.extend_from_slice(&(-3.0f64).to_le_bytes());
        let rep = s.apply(&req);
        assert_eq!(f64::from_le_bytes(rep[..8].try_into().unwrap()), 3.0);
        assert_eq!(f64::from_le_bytes(rep[8..].try_into().unwrap()), -6.0);
        assert_eq!(ApplicationState::elements(&req), 2);
    }
}
