//! Accountable BFT ordering of checkpoint votes.
//!
//! The engine is a Streamlet-style chained protocol. Each epoch has a leader
//! that proposes a block of pending payloads on a longest notarized chain.
//! Nodes vote for the first such proposal in their current epoch, `q_bft`
//! votes notarize a block, and three notarized blocks with consecutive
//! epochs finalize the middle one together with its prefix.

mod engine;
mod forensics;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use engine::{BftNode, BftOutput};
pub use forensics::{
    bft_culprits, bft_forensics, evidences_conflict, ContradictoryVotes, ForensicsError, SignedVoteRef,
};

use crate::crypto::{self, Hasher, RandomTape, Signature, Stream};
use crate::gadget::CheckpointVote;
use crate::types::{Digest, NodeId};

/// Engine timing and quorum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BftConfig {
    pub n: u32,
    pub q_bft: u32,
    /// Slots per epoch.
    pub epoch_len: u64,
    /// Offset within the epoch at which the leader proposes.
    pub leader_wait: u64,
}

impl BftConfig {
    /// Epochs of `max(1, 3Δ)` slots with the leader waiting Δ before proposing.
    pub fn for_delta(n: u32, q_bft: u32, delta: u64) -> Self {
        BftConfig {
            n,
            q_bft,
            epoch_len: (3 * delta).max(1),
            leader_wait: delta,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.q_bft == 0 || self.q_bft > self.n || 2 * self.q_bft <= self.n {
            return Err(format!("n/2 < q_bft <= n (got q_bft = {}, n = {})", self.q_bft, self.n));
        }
        if self.epoch_len == 0 || self.leader_wait >= self.epoch_len {
            return Err("leader_wait < epoch_len and epoch_len >= 1".into());
        }
        Ok(())
    }
}

pub fn bft_leader(epoch: u64, n: u32, tape: &RandomTape) -> NodeId {
    let x = tape.draw(Stream::BftLeader, epoch, 0);
    NodeId(((x as u128 * n as u128) >> 64) as u32)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BftBlock {
    pub digest: Digest,
    pub epoch: u64,
    pub height: u64,
    pub parent: Option<Digest>,
    pub proposer: NodeId,
    pub payloads: Vec<CheckpointVote>,
}

impl BftBlock {
    pub fn genesis() -> Self {
        BftBlock {
            digest: Self::compute_digest(0, 0, None, NodeId(0), &[]),
            epoch: 0,
            height: 0,
            parent: None,
            proposer: NodeId(0),
            payloads: Vec::new(),
        }
    }

    pub fn new(epoch: u64, parent: &BftBlock, proposer: NodeId, payloads: Vec<CheckpointVote>) -> Self {
        let height = parent.height + 1;
        BftBlock {
            digest: Self::compute_digest(epoch, height, Some(parent.digest), proposer, &payloads),
            epoch,
            height,
            parent: Some(parent.digest),
            proposer,
            payloads,
        }
    }

    pub fn compute_digest(
        epoch: u64,
        height: u64,
        parent: Option<Digest>,
        proposer: NodeId,
        payloads: &[CheckpointVote],
    ) -> Digest {
        let mut h = Hasher::new("accgadget/bft-block")
            .u64(epoch)
            .u64(height)
            .u64(proposer.0 as u64);
        h = match parent {
            Some(p) => h.u64(1).digest(&p),
            None => h.u64(0),
        };
        h = h.u64(payloads.len() as u64);
        for p in payloads {
            h = h.digest(&p.payload_id()).digest(&p.signature.0);
        }
        h.finish()
    }

    pub fn digest_is_valid(&self) -> bool {
        self.digest
            == Self::compute_digest(self.epoch, self.height, self.parent, self.proposer, &self.payloads)
    }
}

/// Statement a node signs when voting for a BFT block.
pub fn vote_statement(digest: &Digest) -> Digest {
    Hasher::new("accgadget/bft-vote").digest(digest).finish()
}

/// Statement a leader signs when proposing a BFT block.
pub fn proposal_statement(digest: &Digest) -> Digest {
    Hasher::new("accgadget/bft-propose").digest(digest).finish()
}

/// Votes from at least `threshold` distinct nodes on one block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCert {
    pub view: u64,
    pub block_digest: Digest,
    pub signers: BTreeSet<NodeId>,
    /// One signature per signer, in signer order.
    pub signatures: Vec<Signature>,
    pub threshold: u32,
}

impl QuorumCert {
    pub fn verify(&self, n: u32) -> bool {
        let stmt = vote_statement(&self.block_digest);
        self.signers.len() >= self.threshold as usize
            && self.signers.len() == self.signatures.len()
            && self.signers.iter().all(|s| s.0 < n)
            && self
                .signers
                .iter()
                .zip(&self.signatures)
                .all(|(s, sig)| crypto::verify(*s, &stmt, sig))
    }
}

/// Entry of the finalized payload log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub position: u64,
    pub payload: CheckpointVote,
    pub certificate: Arc<QuorumCert>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedBlock {
    pub block: BftBlock,
    pub qc: QuorumCert,
}

/// Notarized chain from genesis (exclusive) through the last block of the
/// finalizing triple, with the height of the finalized prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BftEvidence {
    pub chain: Vec<CertifiedBlock>,
    pub finalized_height: u64,
}

impl BftEvidence {
    /// Digests of the finalized prefix, genesis excluded.
    pub fn finalized_digests(&self) -> Vec<Digest> {
        self.chain
            .iter()
            .take(self.finalized_height as usize)
            .map(|c| c.block.digest)
            .collect()
    }

    /// Payloads of the finalized prefix with duplicates dropped, i.e. the
    /// log this evidence attests to.
    pub fn finalized_log(&self) -> Vec<CheckpointVote> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for c in self.chain.iter().take(self.finalized_height as usize) {
            for p in &c.block.payloads {
                if seen.insert(p.payload_id()) {
                    out.push(p.clone());
                }
            }
        }
        out
    }

    /// Checks linkage, certificates and that the finalized marker is backed
    /// by three notarized blocks with consecutive epochs.
    pub fn validate(&self, n: u32, q_bft: u32) -> Result<(), String> {
        let genesis = BftBlock::genesis();
        let mut prev = &genesis;
        for (i, c) in self.chain.iter().enumerate() {
            let b = &c.block;
            if b.parent != Some(prev.digest) || b.height != prev.height + 1 || b.epoch <= prev.epoch {
                return Err(format!("bad linkage at index {i}"));
            }
            if !b.digest_is_valid() {
                return Err(format!("bad digest at index {i}"));
            }
            if c.qc.block_digest != b.digest
                || c.qc.view != b.epoch
                || c.qc.threshold < q_bft
                || !c.qc.verify(n)
            {
                return Err(format!("bad certificate at index {i}"));
            }
            prev = b;
        }
        let f = self.finalized_height as usize;
        if f == 0 {
            return Ok(());
        }
        if f + 1 > self.chain.len() {
            return Err("finalized marker beyond the chain".into());
        }
        let epoch_at = |h: usize| if h == 0 { 0 } else { self.chain[h - 1].block.epoch };
        if epoch_at(f - 1) + 1 != epoch_at(f) || epoch_at(f) + 1 != epoch_at(f + 1) {
            return Err("finalized marker lacks a consecutive-epoch triple".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BftMsg {
    Propose {
        block: Arc<BftBlock>,
        signature: Signature,
    },
    Vote {
        block: Arc<BftBlock>,
        voter: NodeId,
        signature: Signature,
    },
    Payload(CheckpointVote),
}

impl BftMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            BftMsg::Propose { .. } => "bft_propose",
            BftMsg::Vote { .. } => "bft_vote",
            BftMsg::Payload(_) => "bft_payload",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_length_rule() {
        assert_eq!(BftConfig::for_delta(4, 3, 0).epoch_len, 1);
        assert_eq!(BftConfig::for_delta(4, 3, 2).epoch_len, 6);
        assert!(BftConfig::for_delta(4, 2, 1).validate().is_err());
        assert!(BftConfig::for_delta(4, 3, 1).validate().is_ok());
    }

    #[test]
    fn leaders_cover_all_nodes() {
        let tape = RandomTape::new(4);
        let mut seen = BTreeSet::new();
        for e in 0..200 {
            seen.insert(bft_leader(e, 7, &tape));
        }
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn block_digest_binds_payload() {
        let g = BftBlock::genesis();
        let a = BftBlock::new(1, &g, NodeId(0), vec![CheckpointVote::reject(0, NodeId(1))]);
        let b = BftBlock::new(1, &g, NodeId(0), vec![CheckpointVote::reject(0, NodeId(2))]);
        assert_ne!(a.digest, b.digest);
        assert!(a.digest_is_valid());
    }
}
