use std::collections::{BTreeMap, HashMap};

use super::{CheckpointDecision, CheckpointVote, GadgetParams, VoteKind};
use crate::types::{BlockId, NodeId, Slot};

/// Latest vote per author for the current iteration. `None` means reject.
#[derive(Clone, Debug, Default)]
pub struct InterpreterState {
    pub curr_iter: u64,
    pub votes: BTreeMap<NodeId, Option<BlockId>>,
    accepts: HashMap<BlockId, u32>,
    rejects: u32,
}

impl InterpreterState {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&mut self, author: NodeId, vote: Option<BlockId>) {
        match self.votes.insert(author, vote) {
            Some(Some(b)) => *self.accepts.get_mut(&b).expect("counted") -= 1,
            Some(None) => self.rejects -= 1,
            None => {}
        }
        match vote {
            Some(b) => *self.accepts.entry(b).or_default() += 1,
            None => self.rejects += 1,
        }
    }

    fn reset(&mut self) {
        self.votes.clear();
        self.accepts.clear();
        self.rejects = 0;
        self.curr_iter += 1;
    }
}

/// Feeds the next vote from the ordered log. Votes with bad signatures,
/// proposals and votes for other iterations are ignored.
pub fn interpreter_step(
    state: &mut InterpreterState,
    vote: &CheckpointVote,
    params: &GadgetParams,
    now: Slot,
) -> Option<CheckpointDecision> {
    if vote.iteration != state.curr_iter || !vote.verify() {
        return None;
    }
    match vote.kind {
        VoteKind::Accept => state.record(vote.author, vote.block),
        VoteKind::Reject => state.record(vote.author, None),
        VoteKind::Propose => return None,
    }
    let winner = state
        .accepts
        .iter()
        .filter(|(_, &c)| c >= params.q_accept)
        .map(|(b, _)| *b)
        .min();
    let block = match winner {
        Some(b) => Some(b),
        None if state.rejects >= params.q_reject => None,
        None => return None,
    };
    let decision = CheckpointDecision {
        iteration: state.curr_iter,
        block,
        decided_at: now,
    };
    state.reset();
    Some(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Digest;
    use proptest::prelude::*;

    fn p(q_accept: u32, q_reject: u32) -> GadgetParams {
        GadgetParams {
            t_checkpoint: 1,
            t_timeout: 1,
            q_accept,
            q_reject,
        }
    }

    #[test]
    fn accept_quorum_decides() {
        let b = Digest([1; 32]);
        let mut st = InterpreterState::new();
        assert_eq!(interpreter_step(&mut st, &CheckpointVote::accept(0, b, NodeId(1)), &p(2, 2), 0), None);
        let d = interpreter_step(&mut st, &CheckpointVote::accept(0, b, NodeId(2)), &p(2, 2), 4).unwrap();
        assert_eq!((d.iteration, d.block, d.decided_at), (0, Some(b), 4));
        assert_eq!(st.curr_iter, 1);
        assert!(st.votes.is_empty());
    }

    #[test]
    fn reject_threshold_literal_and_default() {
        let mut st = InterpreterState::new();
        let d = interpreter_step(&mut st, &CheckpointVote::reject(0, NodeId(1)), &p(2, 1), 0);
        assert_eq!(d.map(|d| d.block), Some(None));
        let mut st = InterpreterState::new();
        assert_eq!(interpreter_step(&mut st, &CheckpointVote::reject(0, NodeId(1)), &p(2, 2), 0), None);
    }

    #[test]
    fn latest_vote_per_author_counts() {
        let b = Digest([1; 32]);
        let mut st = InterpreterState::new();
        let par = p(2, 2);
        interpreter_step(&mut st, &CheckpointVote::accept(0, b, NodeId(1)), &par, 0);
        interpreter_step(&mut st, &CheckpointVote::reject(0, NodeId(1)), &par, 0);
        assert_eq!(interpreter_step(&mut st, &CheckpointVote::accept(0, b, NodeId(2)), &par, 0), None);
        // Duplicate from the same author does not double count.
        assert_eq!(interpreter_step(&mut st, &CheckpointVote::accept(0, b, NodeId(2)), &par, 0), None);
        let d = interpreter_step(&mut st, &CheckpointVote::reject(0, NodeId(3)), &par, 0).unwrap();
        assert_eq!(d.block, None);
    }

    #[test]
    fn other_iterations_and_forgeries_are_ignored() {
        let b = Digest([1; 32]);
        let mut st = InterpreterState::new();
        let par = p(1, 1);
        assert_eq!(interpreter_step(&mut st, &CheckpointVote::accept(1, b, NodeId(1)), &par, 0), None);
        let mut forged = CheckpointVote::accept(0, b, NodeId(1));
        forged.author = NodeId(2);
        assert_eq!(interpreter_step(&mut st, &forged, &par, 0), None);
        assert_eq!(interpreter_step(&mut st, &CheckpointVote::propose(0, b, NodeId(1)), &par, 0), None);
    }

    #[test]
    fn empty_stream_never_decides() {
        let st = InterpreterState::new();
        assert_eq!(st.curr_iter, 0);
    }

    /// Direct evaluation of the decision rule on a vote prefix.
    fn oracle(votes: &[CheckpointVote], par: &GadgetParams) -> Vec<(u64, Option<BlockId>)> {
        let mut out = Vec::new();
        let mut iter = 0;
        let mut latest: BTreeMap<NodeId, Option<BlockId>> = BTreeMap::new();
        for v in votes {
            if v.iteration != iter || v.kind == VoteKind::Propose {
                continue;
            }
            latest.insert(v.author, v.block);
            let mut tally: BTreeMap<BlockId, u32> = BTreeMap::new();
            let mut rej = 0;
            for x in latest.values() {
                match x {
                    Some(b) => *tally.entry(*b).or_default() += 1,
                    None => rej += 1,
                }
            }
            if let Some((b, _)) = tally.iter().find(|(_, &c)| c >= par.q_accept) {
                out.push((iter, Some(*b)));
            } else if rej >= par.q_reject {
                out.push((iter, None));
            } else {
                continue;
            }
            iter += 1;
            latest.clear();
        }
        out
    }

    proptest! {
        #[test]
        fn matches_direct_evaluation(
            raw in proptest::collection::vec((0u32..5, 0u64..3, 0u8..3), 0..60)
        ) {
            let par = p(3, 2);
            let blocks = [Digest([1; 32]), Digest([2; 32])];
            let votes: Vec<CheckpointVote> = raw
                .iter()
                .map(|&(a, it, k)| match k {
                    0 => CheckpointVote::reject(it, NodeId(a)),
                    _ => CheckpointVote::accept(it, blocks[k as usize - 1], NodeId(a)),
                })
                .collect();
            let mut st = InterpreterState::new();
            let got: Vec<_> = votes
                .iter()
                .filter_map(|v| interpreter_step(&mut st, v, &par, 0))
                .map(|d| (d.iteration, d.block))
                .collect();
            prop_assert_eq!(&got, &oracle(&votes, &par));
            for (i, d) in got.iter().enumerate() {
                prop_assert_eq!(d.0, i as u64);
            }
        }
    }
}
