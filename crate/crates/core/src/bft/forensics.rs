//! Culprit extraction from two conflicting BFT evidences.
//!
//! An honest replica votes at most once per epoch, and only for a block on a
//! longest notarized chain it has seen. Its longest notarized height never
//! shrinks, so the heights of its votes never decrease as epochs increase.
//! Two certified blocks therefore convict every common signer when they
//! share an epoch, or when the earlier epoch carries the greater height.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BftEvidence, CertifiedBlock};
use crate::types::{Digest, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForensicsError {
    #[error("evidences attest to consistent logs")]
    NotConflicting,
    #[error("evidence {which} is malformed: {reason}")]
    InvalidEvidence { which: u8, reason: String },
}

/// A vote recovered from a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignedVoteRef {
    pub epoch: u64,
    pub height: u64,
    pub block: Digest,
}

/// Two votes by one node that no honest replica would both cast.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContradictoryVotes {
    pub node: NodeId,
    pub first: SignedVoteRef,
    pub second: SignedVoteRef,
}

fn vote_ref(c: &CertifiedBlock) -> SignedVoteRef {
    SignedVoteRef {
        epoch: c.block.epoch,
        height: c.block.height,
        block: c.block.digest,
    }
}

/// True iff the finalized prefixes of the two evidences diverge.
pub fn evidences_conflict(e1: &BftEvidence, e2: &BftEvidence) -> bool {
    let a = e1.finalized_digests();
    let b = e2.finalized_digests();
    let m = a.len().min(b.len());
    a[..m] != b[..m]
}

/// Returns one contradictory vote pair per convicted node, keyed by node.
pub fn bft_forensics(
    e1: &BftEvidence,
    e2: &BftEvidence,
    n: u32,
    q_bft: u32,
) -> Result<BTreeMap<NodeId, ContradictoryVotes>, ForensicsError> {
    e1.validate(n, q_bft)
        .map_err(|reason| ForensicsError::InvalidEvidence { which: 1, reason })?;
    e2.validate(n, q_bft)
        .map_err(|reason| ForensicsError::InvalidEvidence { which: 2, reason })?;
    if !evidences_conflict(e1, e2) {
        return Err(ForensicsError::NotConflicting);
    }
    let mut certified: BTreeMap<Digest, &CertifiedBlock> = BTreeMap::new();
    for c in e1.chain.iter().chain(e2.chain.iter()) {
        certified.entry(c.block.digest).or_insert(c);
    }
    let all: Vec<&CertifiedBlock> = certified.into_values().collect();
    let mut out = BTreeMap::new();
    for (i, x) in all.iter().enumerate() {
        for y in &all[i + 1..] {
            let (x, y) = if x.block.epoch <= y.block.epoch { (x, y) } else { (y, x) };
            let contradictory = x.block.epoch == y.block.epoch || x.block.height > y.block.height;
            if !contradictory {
                continue;
            }
            for node in x.qc.signers.intersection(&y.qc.signers) {
                out.entry(*node).or_insert(ContradictoryVotes {
                    node: *node,
                    first: vote_ref(x),
                    second: vote_ref(y),
                });
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper returning only the convicted ids.
pub fn bft_culprits(
    e1: &BftEvidence,
    e2: &BftEvidence,
    n: u32,
    q_bft: u32,
) -> Result<BTreeSet<NodeId>, ForensicsError> {
    Ok(bft_forensics(e1, e2, n, q_bft)?.into_keys().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bft::{vote_statement, BftBlock, QuorumCert};
    use crate::crypto::sign;
    use crate::gadget::CheckpointVote;

    fn certify(block: BftBlock, signers: &[u32], q: u32) -> CertifiedBlock {
        let signers: BTreeSet<NodeId> = signers.iter().map(|&s| NodeId(s)).collect();
        let stmt = vote_statement(&block.digest);
        CertifiedBlock {
            qc: QuorumCert {
                view: block.epoch,
                block_digest: block.digest,
                signatures: signers.iter().map(|s| sign(*s, &stmt)).collect(),
                signers,
                threshold: q,
            },
            block,
        }
    }

    /// Builds a notarized chain with the given (epoch, signers) per block
    /// and a distinguishing payload author, finalized at `fin`.
    fn chain(spec: &[(u64, &[u32])], tag: u32, fin: u64, q: u32) -> BftEvidence {
        let mut prev = BftBlock::genesis();
        let mut out = Vec::new();
        for (epoch, signers) in spec {
            let b = BftBlock::new(*epoch, &prev, NodeId(0), vec![CheckpointVote::reject(*epoch, NodeId(tag))]);
            prev = b.clone();
            out.push(certify(b, signers, q));
        }
        BftEvidence {
            chain: out,
            finalized_height: fin,
        }
    }

    #[test]
    fn identical_evidences_do_not_conflict() {
        let e = chain(&[(1, &[0, 1, 2]), (2, &[0, 1, 2]), (3, &[0, 1, 2])], 0, 2, 3);
        assert_eq!(bft_forensics(&e, &e, 4, 3), Err(ForensicsError::NotConflicting));
    }

    #[test]
    fn same_epoch_equivocation_convicts_the_intersection() {
        let a = chain(&[(1, &[1, 2, 3]), (2, &[1, 2, 3]), (3, &[1, 2, 3])], 7, 2, 3);
        let b = chain(&[(1, &[0, 2, 3]), (2, &[0, 2, 3]), (3, &[0, 2, 3])], 8, 2, 3);
        let got = bft_culprits(&a, &b, 4, 3).unwrap();
        assert_eq!(got, BTreeSet::from([NodeId(2), NodeId(3)]));
    }

    #[test]
    fn height_regression_convicts() {
        // Chain a finalizes height 2 at epochs 1,2,3. Chain b skips to epoch 4
        // on a fork from height 1, so its block at epoch 4 has height 2 while
        // a's epoch-3 block has height 3.
        let a = chain(&[(1, &[0, 1, 2]), (2, &[0, 1, 2]), (3, &[0, 1, 2])], 1, 2, 3);
        let mut prev = a.chain[0].block.clone();
        let mut bchain = vec![a.chain[0].clone()];
        for (epoch, signers) in [(4u64, [1u32, 2, 3]), (5, [1, 2, 3]), (6, [1, 2, 3])] {
            let blk = BftBlock::new(epoch, &prev, NodeId(0), vec![CheckpointVote::reject(epoch, NodeId(9))]);
            prev = blk.clone();
            bchain.push(certify(blk, &signers, 3));
        }
        let b = BftEvidence {
            chain: bchain,
            finalized_height: 3,
        };
        let got = bft_culprits(&a, &b, 4, 3).unwrap();
        assert_eq!(got, BTreeSet::from([NodeId(1), NodeId(2)]));
        assert!(got.len() >= 2 * 3 - 4);
    }

    #[test]
    fn forged_certificate_is_rejected() {
        let a = chain(&[(1, &[0, 1, 2]), (2, &[0, 1, 2]), (3, &[0, 1, 2])], 1, 2, 3);
        let mut b = chain(&[(1, &[1, 2, 3]), (2, &[1, 2, 3]), (3, &[1, 2, 3])], 2, 2, 3);
        b.chain[0].qc.signatures[0] = a.chain[0].qc.signatures[0];
        assert!(matches!(
            bft_forensics(&a, &b, 4, 3),
            Err(ForensicsError::InvalidEvidence { which: 2, .. })
        ));
    }
}
