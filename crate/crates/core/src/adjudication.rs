//! The judge: given two self-contained evidences that attest to conflicting
//! ledgers, name nodes whose own signed messages contradict protocol rules.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bft::{bft_forensics, evidences_conflict, BftEvidence, ContradictoryVotes, ForensicsError};
use crate::chain::{chain_ledger, Block};
use crate::gadget::{interpreter_step, CheckpointDecision, CheckpointVote, GadgetParams, InterpreterState, VoteKind};
use crate::ledger::{conflicting, Ledger};
use crate::types::{BlockId, NodeId, Slot};

/// Which ledger an evidence attests to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerKind {
    Da,
    Acc,
    Bft,
}

/// What a node hands to the judge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub node: NodeId,
    pub at_slot: Slot,
    pub ledger: LedgerKind,
    pub bft_evidence: BftEvidence,
    pub observed_decisions: Vec<CheckpointDecision>,
    pub vote_transcript: Vec<CheckpointVote>,
    /// Block headers from genesis to the tip of the attested ledger.
    pub chain: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofKind {
    BftEquivocation,
    CheckpointDoubleVote,
    CrossIterationInconsistency,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Supporting {
    Bft(ContradictoryVotes),
    Checkpoint {
        kind: ProofKind,
        first: CheckpointVote,
        second: CheckpointVote,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub violators: BTreeSet<NodeId>,
    pub proof_kind: ProofKind,
    pub supporting: BTreeMap<NodeId, Supporting>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Adjudication {
    Guilty(Verdict),
    /// The ledgers conflict but no signed message pair proves anyone guilty.
    UnattributableConflict,
}

impl Adjudication {
    pub fn violators(&self) -> BTreeSet<NodeId> {
        match self {
            Adjudication::Guilty(v) => v.violators.clone(),
            Adjudication::UnattributableConflict => BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdjudicationError {
    #[error("the attested ledgers are consistent")]
    NotConflicting,
    #[error("evidence from node {node} is malformed: {reason}")]
    InvalidEvidence { node: NodeId, reason: String },
}

impl Evidence {
    /// Ledger implied by the evidence, after checking it is self-consistent.
    pub fn verified_ledger(&self, params: &GadgetParams, n: u32, q_bft: u32) -> Result<Ledger, AdjudicationError> {
        let bad = |reason: String| AdjudicationError::InvalidEvidence {
            node: self.node,
            reason,
        };
        let genesis = Block::genesis();
        match self.chain.first() {
            Some(b) if *b == genesis => {}
            _ => return Err(bad("chain does not start at genesis".into())),
        }
        for w in self.chain.windows(2) {
            if w[1].parent != Some(w[0].id) || !w[1].id_is_valid() || w[1].slot <= w[0].slot {
                return Err(bad(format!("chain breaks at block {}", w[1].id)));
            }
        }
        if self.ledger != LedgerKind::Da {
            // Votes are individually signed, so a bare transcript is admissible;
            // when a certified chain is supplied it must match it exactly.
            if !self.bft_evidence.chain.is_empty() {
                self.bft_evidence.validate(n, q_bft).map_err(bad)?;
                if self.bft_evidence.finalized_log() != self.vote_transcript {
                    return Err(bad("vote transcript differs from the certified log".into()));
                }
            }
            if let Some(v) = self.vote_transcript.iter().find(|v| !v.verify()) {
                return Err(bad(format!("bad signature on a vote by {}", v.author)));
            }
            let replayed = replay_decisions(&self.vote_transcript, params);
            let same = replayed.len() == self.observed_decisions.len()
                && replayed
                    .iter()
                    .zip(&self.observed_decisions)
                    .all(|(a, b)| a.iteration == b.iteration && a.block == b.block);
            if !same {
                return Err(bad("observed decisions do not replay from the transcript".into()));
            }
        }
        if self.ledger == LedgerKind::Acc {
            let on_chain: BTreeSet<BlockId> = self.chain.iter().map(|b| b.id).collect();
            let mut latest = genesis.id;
            for d in &self.observed_decisions {
                if let Some(b) = d.block {
                    if !on_chain.contains(&b) {
                        return Err(bad(format!("checkpoint {b} missing from the chain")));
                    }
                    latest = b;
                }
            }
            if self.chain.last().map(|b| b.id) != Some(latest) {
                return Err(bad("chain does not end at the latest checkpoint".into()));
            }
        }
        if self.ledger == LedgerKind::Bft {
            return Ok(Ledger::new());
        }
        let arcs: Vec<Arc<Block>> = self.chain.iter().cloned().map(Arc::new).collect();
        Ok(chain_ledger(&arcs))
    }
}

/// Decisions a fresh interpreter outputs on `votes`.
pub fn replay_decisions(votes: &[CheckpointVote], params: &GadgetParams) -> Vec<CheckpointDecision> {
    let mut st = InterpreterState::new();
    votes
        .iter()
        .filter_map(|v| interpreter_step(&mut st, v, params, 0))
        .collect()
}

fn ledgers_conflict(w1: &Evidence, w2: &Evidence, params: &GadgetParams, n: u32, q_bft: u32) -> Result<bool, AdjudicationError> {
    let l1 = w1.verified_ledger(params, n, q_bft)?;
    let l2 = w2.verified_ledger(params, n, q_bft)?;
    if w1.ledger == LedgerKind::Bft || w2.ledger == LedgerKind::Bft {
        return Ok(evidences_conflict(&w1.bft_evidence, &w2.bft_evidence));
    }
    Ok(conflicting(&l1, &l2))
}

/// Accept votes per `(iteration, block)` in a transcript, one per author.
fn accept_votes(w: &Evidence) -> BTreeMap<(u64, BlockId), BTreeMap<NodeId, CheckpointVote>> {
    let mut out: BTreeMap<(u64, BlockId), BTreeMap<NodeId, CheckpointVote>> = BTreeMap::new();
    for v in &w.vote_transcript {
        if v.kind == VoteKind::Accept && v.verify() {
            if let Some(b) = v.block {
                out.entry((v.iteration, b)).or_default().entry(v.author).or_insert_with(|| v.clone());
            }
        }
    }
    out
}

/// True iff `a` and `b` lie on one chain according to the two headers lists.
fn blocks_consistent(a: &BlockId, chain_a: &[Block], b: &BlockId, chain_b: &[Block]) -> bool {
    let prefix_to = |chain: &[Block], x: &BlockId| -> Option<usize> { chain.iter().position(|blk| blk.id == *x) };
    match (prefix_to(chain_a, a), prefix_to(chain_b, b)) {
        (Some(ia), Some(ib)) => {
            let (short, si, long) = if ia <= ib { (chain_a, ia, chain_b) } else { (chain_b, ib, chain_a) };
            long.get(si).map(|blk| blk.id) == Some(short[si].id)
        }
        _ => false,
    }
}

/// Adjudicates one pair of evidences.
pub fn adjudicate(
    w1: &Evidence,
    w2: &Evidence,
    params: &GadgetParams,
    n: u32,
    q_bft: u32,
) -> Result<Adjudication, AdjudicationError> {
    if !ledgers_conflict(w1, w2, params, n, q_bft)? {
        return Err(AdjudicationError::NotConflicting);
    }
    if !w1.bft_evidence.chain.is_empty()
        && !w2.bft_evidence.chain.is_empty()
        && evidences_conflict(&w1.bft_evidence, &w2.bft_evidence)
    {
        return match bft_forensics(&w1.bft_evidence, &w2.bft_evidence, n, q_bft) {
            Ok(found) if !found.is_empty() => Ok(Adjudication::Guilty(Verdict {
                violators: found.keys().copied().collect(),
                proof_kind: ProofKind::BftEquivocation,
                supporting: found.into_iter().map(|(k, v)| (k, Supporting::Bft(v))).collect(),
            })),
            Ok(_) => Ok(Adjudication::UnattributableConflict),
            Err(ForensicsError::NotConflicting) => unreachable!("conflict checked above"),
            Err(ForensicsError::InvalidEvidence { which, reason }) => Err(AdjudicationError::InvalidEvidence {
                node: if which == 1 { w1.node } else { w2.node },
                reason,
            }),
        };
    }
    let a1 = accept_votes(w1);
    let a2 = accept_votes(w2);
    let mut supporting = BTreeMap::new();
    let mut first_kind = None;
    for d1 in w1.observed_decisions.iter().filter(|d| d.block.is_some()) {
        for d2 in w2.observed_decisions.iter().filter(|d| d.block.is_some()) {
            let (b1, b2) = (d1.block.unwrap(), d2.block.unwrap());
            if blocks_consistent(&b1, &w1.chain, &b2, &w2.chain) {
                continue;
            }
            let kind = if d1.iteration == d2.iteration {
                ProofKind::CheckpointDoubleVote
            } else {
                ProofKind::CrossIterationInconsistency
            };
            let (Some(v1), Some(v2)) = (a1.get(&(d1.iteration, b1)), a2.get(&(d2.iteration, b2))) else {
                continue;
            };
            for (node, first) in v1 {
                if let Some(second) = v2.get(node) {
                    first_kind.get_or_insert(kind);
                    supporting.entry(*node).or_insert_with(|| Supporting::Checkpoint {
                        kind,
                        first: first.clone(),
                        second: second.clone(),
                    });
                }
            }
        }
    }
    match first_kind {
        Some(proof_kind) => Ok(Adjudication::Guilty(Verdict {
            violators: supporting.keys().copied().collect(),
            proof_kind,
            supporting,
        })),
        None => Ok(Adjudication::UnattributableConflict),
    }
}

/// Adjudicates every conflicting pair and unions the verdicts. Errors only
/// when no pair conflicts.
pub fn adjudicate_all(
    evidences: &[Evidence],
    params: &GadgetParams,
    n: u32,
    q_bft: u32,
) -> Result<Adjudication, AdjudicationError> {
    let mut merged: Option<Verdict> = None;
    let mut any_conflict = false;
    for i in 0..evidences.len() {
        for j in i + 1..evidences.len() {
            match adjudicate(&evidences[i], &evidences[j], params, n, q_bft) {
                Ok(Adjudication::Guilty(v)) => {
                    any_conflict = true;
                    match merged.as_mut() {
                        None => merged = Some(v),
                        Some(m) => {
                            m.violators.extend(v.violators);
                            for (k, s) in v.supporting {
                                m.supporting.entry(k).or_insert(s);
                            }
                        }
                    }
                }
                Ok(Adjudication::UnattributableConflict) => any_conflict = true,
                Err(AdjudicationError::NotConflicting) => {}
                Err(e) => return Err(e),
            }
        }
    }
    match (merged, any_conflict) {
        (Some(v), _) => Ok(Adjudication::Guilty(v)),
        (None, true) => Ok(Adjudication::UnattributableConflict),
        (None, false) => Err(AdjudicationError::NotConflicting),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TxId;

    fn params() -> GadgetParams {
        GadgetParams {
            t_checkpoint: 10,
            t_timeout: 5,
            q_accept: 3,
            q_reject: 2,
        }
    }

    fn branch(tag: u64, len: u64) -> Vec<Block> {
        let mut out = vec![Block::genesis()];
        for s in 1..=len {
            let b = Block::new(out.last().unwrap().id, NodeId(0), s, vec![TxId(tag * 100 + s)]);
            out.push(b);
        }
        out
    }

    /// Evidence carrying a bare signed transcript and no BFT chain.
    fn acc_evidence(node: u32, chain: Vec<Block>, votes: Vec<CheckpointVote>) -> Evidence {
        let decisions = replay_decisions(&votes, &params());
        Evidence {
            node: NodeId(node),
            at_slot: 0,
            ledger: LedgerKind::Acc,
            bft_evidence: BftEvidence::default(),
            observed_decisions: decisions,
            vote_transcript: votes,
            chain,
        }
    }

    #[test]
    fn identical_evidences_are_not_conflicting() {
        let a = branch(1, 4);
        let votes: Vec<_> = (1..=3).map(|i| CheckpointVote::accept(0, a[4].id, NodeId(i))).collect();
        let e = acc_evidence(0, a.clone(), votes);
        assert_eq!(adjudicate(&e, &e, &params(), 4, 3), Err(AdjudicationError::NotConflicting));
    }

    #[test]
    fn double_accept_in_one_iteration() {
        // Preset (n - f, f + 1) with n = 4, f = 1: q_accept = 3.
        let a = branch(1, 4);
        let b = branch(2, 4);
        let va: Vec<_> = [0, 1, 2].map(|i| CheckpointVote::accept(0, a[4].id, NodeId(i))).to_vec();
        let vb: Vec<_> = [1, 2, 3].map(|i| CheckpointVote::accept(0, b[4].id, NodeId(i))).to_vec();
        let w1 = acc_evidence(0, a, va);
        let w2 = acc_evidence(3, b, vb);
        let Adjudication::Guilty(v) = adjudicate(&w1, &w2, &params(), 4, 3).unwrap() else {
            panic!("expected a verdict");
        };
        assert_eq!(v.violators, BTreeSet::from([NodeId(1), NodeId(2)]));
        assert_eq!(v.proof_kind, ProofKind::CheckpointDoubleVote);
        assert!(v.violators.iter().all(|x| v.supporting.contains_key(x)));
    }

    #[test]
    fn cross_iteration_accepts() {
        let a = branch(1, 6);
        let b = branch(2, 6);
        let mut va: Vec<_> = [0, 1, 2].map(|i| CheckpointVote::accept(0, a[2].id, NodeId(i))).to_vec();
        va.extend([0, 1, 2].map(|i| CheckpointVote::reject(1, NodeId(i))));
        let mut vb: Vec<_> = [0, 1, 3].map(|i| CheckpointVote::reject(0, NodeId(i))).to_vec();
        vb.extend([1, 2, 3].map(|i| CheckpointVote::accept(1, b[5].id, NodeId(i))));
        let w1 = acc_evidence(0, a[..3].to_vec(), va);
        let w2 = acc_evidence(3, b[..6].to_vec(), vb);
        let Adjudication::Guilty(v) = adjudicate(&w1, &w2, &params(), 4, 3).unwrap() else {
            panic!("expected a verdict");
        };
        assert_eq!(v.proof_kind, ProofKind::CrossIterationInconsistency);
        assert_eq!(v.violators, BTreeSet::from([NodeId(1), NodeId(2)]));
    }

    #[test]
    fn lc_only_conflict_is_unattributable() {
        let mk = |node, chain| Evidence {
            node: NodeId(node),
            at_slot: 10,
            ledger: LedgerKind::Da,
            bft_evidence: BftEvidence::default(),
            observed_decisions: vec![],
            vote_transcript: vec![],
            chain,
        };
        let out = adjudicate(&mk(0, branch(1, 3)), &mk(1, branch(2, 3)), &params(), 4, 3).unwrap();
        assert_eq!(out, Adjudication::UnattributableConflict);
    }

    #[test]
    fn tampered_evidence_is_rejected() {
        let a = branch(1, 4);
        let votes: Vec<_> = (0..3).map(|i| CheckpointVote::accept(0, a[4].id, NodeId(i))).collect();
        let mut e = acc_evidence(0, a, votes);
        e.observed_decisions.clear();
        let other = acc_evidence(1, branch(2, 1), vec![]);
        assert!(matches!(
            adjudicate(&e, &other, &params(), 4, 3),
            Err(AdjudicationError::InvalidEvidence { .. })
        ));
    }

    #[test]
    fn pairwise_union() {
        let a = branch(1, 4);
        let b = branch(2, 4);
        let va: Vec<_> = [0, 1, 2].map(|i| CheckpointVote::accept(0, a[4].id, NodeId(i))).to_vec();
        let vb: Vec<_> = [1, 2, 3].map(|i| CheckpointVote::accept(0, b[4].id, NodeId(i))).to_vec();
        let w1 = acc_evidence(0, a.clone(), va.clone());
        let w1b = acc_evidence(1, a, va);
        let w2 = acc_evidence(3, b, vb);
        let got = adjudicate_all(&[w1.clone(), w1b, w2], &params(), 4, 3).unwrap();
        assert_eq!(got.violators(), BTreeSet::from([NodeId(1), NodeId(2)]));
        assert_eq!(adjudicate_all(&[w1], &params(), 4, 3), Err(AdjudicationError::NotConflicting));
    }
}
