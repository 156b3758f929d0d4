//! Hashing, simulated signatures and the seeded random tape.
//!
//! Signatures are simulated: a signature is a hash binding the author to the
//! signed statement. The simulator is the only party that calls [`sign`] on
//! behalf of honest nodes, so honest authorship cannot be forged. Adversarial
//! code may sign anything under its own ids. Non-repudiation is the only
//! property the adjudication layer relies on.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::types::{Digest, NodeId};

/// Incremental domain-separated hasher.
pub struct Hasher(Sha256);

impl Hasher {
    pub fn new(domain: &str) -> Self {
        let mut h = Sha256::new();
        h.update((domain.len() as u32).to_le_bytes());
        h.update(domain.as_bytes());
        Hasher(h)
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn digest(mut self, d: &Digest) -> Self {
        self.0.update(d.0);
        self
    }

    pub fn finish(self) -> Digest {
        let out = self.0.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out);
        Digest(bytes)
    }
}

/// Authorship token over a statement digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(pub Digest);

pub fn sign(author: NodeId, statement: &Digest) -> Signature {
    Signature(
        Hasher::new("accgadget/sig")
            .u64(author.0 as u64)
            .digest(statement)
            .finish(),
    )
}

pub fn verify(author: NodeId, statement: &Digest, sig: &Signature) -> bool {
    sign(author, statement) == *sig
}

/// Independent random streams derived from one master seed.
///
/// Each stream is a random oracle keyed by `(seed, stream)`; queries are pure
/// functions of their inputs, so lottery outcomes and leader draws can be
/// recomputed by any verifier holding the seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTape {
    pub seed: u64,
}

/// Named stream of a [`RandomTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Lottery,
    CheckpointLeader,
    BftLeader,
    Adversary,
    Schedule,
}

impl Stream {
    fn label(self) -> &'static str {
        match self {
            Stream::Lottery => "lottery",
            Stream::CheckpointLeader => "cp-leader",
            Stream::BftLeader => "bft-leader",
            Stream::Adversary => "adversary",
            Stream::Schedule => "schedule",
        }
    }
}

impl RandomTape {
    pub fn new(seed: u64) -> Self {
        RandomTape { seed }
    }

    /// Uniform 64-bit value for `(stream, a, b)`.
    pub fn draw(&self, stream: Stream, a: u64, b: u64) -> u64 {
        let d = Hasher::new("accgadget/tape")
            .u64(self.seed)
            .bytes(stream.label().as_bytes())
            .u64(a)
            .u64(b)
            .finish();
        u64::from_le_bytes(d.0[..8].try_into().unwrap())
    }

    /// Seed for a conventional PRNG dedicated to `stream`.
    pub fn rng_seed(&self, stream: Stream) -> [u8; 32] {
        Hasher::new("accgadget/rng-seed")
            .u64(self.seed)
            .bytes(stream.label().as_bytes())
            .finish()
            .0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_bind_author() {
        let stmt = Hasher::new("x").u64(7).finish();
        let sig = sign(NodeId(3), &stmt);
        assert!(verify(NodeId(3), &stmt, &sig));
        assert!(!verify(NodeId(4), &stmt, &sig));
        let other = Hasher::new("x").u64(8).finish();
        assert!(!verify(NodeId(3), &other, &sig));
    }

    #[test]
    fn streams_are_independent() {
        let tape = RandomTape::new(1);
        assert_ne!(
            tape.draw(Stream::Lottery, 0, 0),
            tape.draw(Stream::BftLeader, 0, 0)
        );
        assert_eq!(tape.draw(Stream::Lottery, 5, 9), tape.draw(Stream::Lottery, 5, 9));
    }
}
