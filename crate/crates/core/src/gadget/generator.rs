use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cp_leader_of_iter, CheckpointDecision, CheckpointVote, GadgetParams, VoteKind};
use crate::chain::BlockTree;
use crate::crypto::RandomTape;
use crate::types::{BlockId, NodeId, Slot};

/// What a node currently knows about its longest chain.
#[derive(Clone, Copy)]
pub struct ChainView<'a> {
    pub tree: &'a BlockTree,
    pub checkpoints: &'a [CheckpointDecision],
    /// Tip of the node's checkpoint-respecting longest chain.
    pub tip: BlockId,
    pub k_cp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase")]
pub enum GenPhase {
    NotStarted,
    WaitingCheckpoint { until: Slot },
    AwaitingProposal { deadline: Slot },
    AwaitingDecision,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorState {
    pub me: NodeId,
    pub n: u32,
    pub last_cp: Option<BlockId>,
    pub curr_iter: u64,
    /// First proposal from the authorized leader, per iteration.
    pub props: BTreeMap<u64, CheckpointVote>,
    pub acted: bool,
    pub phase: GenPhase,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenEvent {
    Tick(Slot),
    Proposal(CheckpointVote, Slot),
    Decision(CheckpointDecision),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenAction {
    BroadcastProposal(CheckpointVote),
    SubmitVote(CheckpointVote),
}

impl GeneratorState {
    pub fn new(me: NodeId, n: u32) -> Self {
        GeneratorState {
            me,
            n,
            last_cp: None,
            curr_iter: 0,
            props: BTreeMap::new(),
            acted: false,
            phase: GenPhase::NotStarted,
        }
    }

    pub fn is_waiting_checkpoint(&self) -> bool {
        matches!(self.phase, GenPhase::WaitingCheckpoint { .. })
    }
}

/// The k_cp-deep block of the view's chain, or genesis for short chains.
pub fn get_curr_proposal_tip(view: &ChainView) -> BlockId {
    let h = view.tree.height(&view.tip).expect("tip is in the tree");
    view.tree
        .ancestor_at(&view.tip, h.saturating_sub(view.k_cp))
        .expect("ancestor exists")
}

/// The proposed block is at least k_cp deep on the view's chain and extends
/// every non-bottom checkpoint.
pub fn is_valid_proposal(proposal: &CheckpointVote, view: &ChainView) -> bool {
    let Some(b) = proposal.block else {
        return false;
    };
    if proposal.kind != VoteKind::Propose || !view.tree.contains(&b) {
        return false;
    }
    let deep = get_curr_proposal_tip(view);
    view.tree.is_ancestor_or_self(&b, &deep)
        && view
            .checkpoints
            .iter()
            .filter_map(|d| d.block)
            .all(|cp| view.tree.is_ancestor_or_self(&cp, &b))
}

/// Advances the generator by one event.
pub fn generator_step(
    state: &mut GeneratorState,
    event: GenEvent,
    view: &ChainView,
    params: &GadgetParams,
    tape: &RandomTape,
) -> Vec<GenAction> {
    let mut out = Vec::new();
    match event {
        GenEvent::Tick(now) => match state.phase {
            GenPhase::NotStarted => enter_iteration(state, now, view, params, tape, &mut out),
            GenPhase::WaitingCheckpoint { until } if now >= until => {
                begin_voting(state, now, view, params, tape, &mut out)
            }
            GenPhase::AwaitingProposal { deadline } if now >= deadline => {
                out.push(GenAction::SubmitVote(CheckpointVote::reject(
                    state.curr_iter,
                    state.me,
                )));
                state.phase = GenPhase::AwaitingDecision;
            }
            _ => {}
        },
        GenEvent::Proposal(vote, _now) => {
            let authorized = vote.kind == VoteKind::Propose
                && vote.verify()
                && vote.iteration >= state.curr_iter
                && vote.author == cp_leader_of_iter(vote.iteration, state.n, tape);
            if authorized && !state.props.contains_key(&vote.iteration) {
                let iter = vote.iteration;
                state.props.insert(iter, vote);
                if iter == state.curr_iter && matches!(state.phase, GenPhase::AwaitingProposal { .. }) {
                    act_on_proposal(state, view, &mut out);
                }
            }
        }
        GenEvent::Decision(d) => {
            if d.iteration == state.curr_iter && state.phase != GenPhase::NotStarted {
                state.last_cp = d.block;
                state.curr_iter += 1;
                state.acted = false;
                let cur = state.curr_iter;
                state.props.retain(|&c, _| c >= cur);
                enter_iteration(state, d.decided_at, view, params, tape, &mut out);
            }
        }
    }
    out
}

fn enter_iteration(
    state: &mut GeneratorState,
    now: Slot,
    view: &ChainView,
    params: &GadgetParams,
    tape: &RandomTape,
    out: &mut Vec<GenAction>,
) {
    if state.last_cp.is_some() {
        state.phase = GenPhase::WaitingCheckpoint {
            until: now + params.t_checkpoint,
        };
    } else {
        begin_voting(state, now, view, params, tape, out);
    }
}

fn begin_voting(
    state: &mut GeneratorState,
    now: Slot,
    view: &ChainView,
    params: &GadgetParams,
    tape: &RandomTape,
    out: &mut Vec<GenAction>,
) {
    state.phase = GenPhase::AwaitingProposal {
        deadline: now + params.t_timeout,
    };
    if cp_leader_of_iter(state.curr_iter, state.n, tape) == state.me {
        let tip = get_curr_proposal_tip(view);
        out.push(GenAction::BroadcastProposal(CheckpointVote::propose(
            state.curr_iter,
            tip,
            state.me,
        )));
    }
    if state.props.contains_key(&state.curr_iter) {
        act_on_proposal(state, view, out);
    }
}

fn act_on_proposal(state: &mut GeneratorState, view: &ChainView, out: &mut Vec<GenAction>) {
    if state.acted {
        return;
    }
    state.acted = true;
    let prop = &state.props[&state.curr_iter];
    let vote = if is_valid_proposal(prop, view) {
        CheckpointVote::accept(state.curr_iter, prop.block.expect("proposal has a block"), state.me)
    } else {
        CheckpointVote::reject(state.curr_iter, state.me)
    };
    out.push(GenAction::SubmitVote(vote));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Block;
    use std::sync::Arc;

    fn line(len: u64) -> (BlockTree, Vec<BlockId>) {
        let mut t = BlockTree::new();
        let mut ids = vec![t.genesis_id()];
        for s in 1..=len {
            let b = Block::new(*ids.last().unwrap(), NodeId(0), s, vec![]);
            ids.push(b.id);
            t.insert(Arc::new(b)).unwrap();
        }
        (t, ids)
    }

    fn params() -> GadgetParams {
        GadgetParams {
            t_checkpoint: 10,
            t_timeout: 5,
            q_accept: 3,
            q_reject: 2,
        }
    }

    /// Seed and node such that the node leads iteration 0 and another node
    /// leads iteration 1.
    fn leader_setup(n: u32) -> (RandomTape, NodeId) {
        let tape = RandomTape::new(1);
        (tape, cp_leader_of_iter(0, n, &tape))
    }

    #[test]
    fn short_chain_proposes_genesis() {
        let (t, ids) = line(3);
        let (tape, leader) = leader_setup(4);
        let view = ChainView {
            tree: &t,
            checkpoints: &[],
            tip: ids[3],
            k_cp: 6,
        };
        let mut st = GeneratorState::new(leader, 4);
        let acts = generator_step(&mut st, GenEvent::Tick(0), &view, &params(), &tape);
        assert_eq!(
            acts[0],
            GenAction::BroadcastProposal(CheckpointVote::propose(0, t.genesis_id(), leader))
        );
    }

    #[test]
    fn valid_proposal_is_accepted_before_timeout() {
        let (t, ids) = line(10);
        let (tape, leader) = leader_setup(4);
        let voter = NodeId((leader.0 + 1) % 4);
        let view = ChainView {
            tree: &t,
            checkpoints: &[],
            tip: ids[10],
            k_cp: 6,
        };
        let mut st = GeneratorState::new(voter, 4);
        assert!(generator_step(&mut st, GenEvent::Tick(0), &view, &params(), &tape).is_empty());
        let prop = CheckpointVote::propose(0, ids[4], leader);
        let acts = generator_step(&mut st, GenEvent::Proposal(prop, 2), &view, &params(), &tape);
        assert_eq!(acts, vec![GenAction::SubmitVote(CheckpointVote::accept(0, ids[4], voter))]);
        // A second proposal in the same iteration is ignored.
        let again = CheckpointVote::propose(0, ids[3], leader);
        assert!(generator_step(&mut st, GenEvent::Proposal(again, 3), &view, &params(), &tape).is_empty());
        // The timeout still fires.
        let acts = generator_step(&mut st, GenEvent::Tick(5), &view, &params(), &tape);
        assert_eq!(acts, vec![GenAction::SubmitVote(CheckpointVote::reject(0, voter))]);
    }

    #[test]
    fn missing_proposal_times_out_into_reject() {
        let (t, ids) = line(10);
        let (tape, leader) = leader_setup(4);
        let voter = NodeId((leader.0 + 1) % 4);
        let view = ChainView {
            tree: &t,
            checkpoints: &[],
            tip: ids[10],
            k_cp: 6,
        };
        let mut st = GeneratorState::new(voter, 4);
        generator_step(&mut st, GenEvent::Tick(0), &view, &params(), &tape);
        for s in 1..5 {
            assert!(generator_step(&mut st, GenEvent::Tick(s), &view, &params(), &tape).is_empty());
        }
        let acts = generator_step(&mut st, GenEvent::Tick(5), &view, &params(), &tape);
        assert_eq!(acts, vec![GenAction::SubmitVote(CheckpointVote::reject(0, voter))]);
        assert_eq!(st.phase, GenPhase::AwaitingDecision);
    }

    #[test]
    fn unauthorized_or_shallow_proposals() {
        let (t, ids) = line(10);
        let (tape, leader) = leader_setup(4);
        let other = NodeId((leader.0 + 1) % 4);
        let view = ChainView {
            tree: &t,
            checkpoints: &[],
            tip: ids[10],
            k_cp: 6,
        };
        let mut st = GeneratorState::new(other, 4);
        generator_step(&mut st, GenEvent::Tick(0), &view, &params(), &tape);
        let impostor = CheckpointVote::propose(0, ids[2], other);
        assert!(generator_step(&mut st, GenEvent::Proposal(impostor, 1), &view, &params(), &tape).is_empty());
        let shallow = CheckpointVote::propose(0, ids[9], leader);
        let acts = generator_step(&mut st, GenEvent::Proposal(shallow, 1), &view, &params(), &tape);
        assert_eq!(acts, vec![GenAction::SubmitVote(CheckpointVote::reject(0, other))]);
    }

    #[test]
    fn validity_against_checkpoints() {
        let (mut t, ids) = line(12);
        let side = Block::new(ids[1], NodeId(3), 50, vec![]);
        t.insert(Arc::new(side.clone())).unwrap();
        let cps = [CheckpointDecision {
            iteration: 0,
            block: Some(ids[3]),
            decided_at: 0,
        }];
        let view = ChainView {
            tree: &t,
            checkpoints: &cps,
            tip: ids[12],
            k_cp: 6,
        };
        let p = |b| CheckpointVote::propose(1, b, NodeId(0));
        assert!(is_valid_proposal(&p(get_curr_proposal_tip(&view)), &view));
        assert!(is_valid_proposal(&p(ids[3]), &view));
        assert!(!is_valid_proposal(&p(ids[2]), &view));
        assert!(!is_valid_proposal(&p(side.id), &view));
        assert!(!is_valid_proposal(&p(ids[11]), &view));
    }

    #[test]
    fn decision_waits_only_after_a_checkpoint() {
        let (t, ids) = line(10);
        let (tape, leader) = leader_setup(4);
        let view = ChainView {
            tree: &t,
            checkpoints: &[],
            tip: ids[10],
            k_cp: 6,
        };
        let mut st = GeneratorState::new(NodeId((leader.0 + 1) % 4), 4);
        generator_step(&mut st, GenEvent::Tick(0), &view, &params(), &tape);
        let bot = CheckpointDecision {
            iteration: 0,
            block: None,
            decided_at: 7,
        };
        generator_step(&mut st, GenEvent::Decision(bot), &view, &params(), &tape);
        assert_eq!(st.curr_iter, 1);
        assert_eq!(st.phase, GenPhase::AwaitingProposal { deadline: 12 });
        let cp = CheckpointDecision {
            iteration: 1,
            block: Some(ids[2]),
            decided_at: 9,
        };
        generator_step(&mut st, GenEvent::Decision(cp), &view, &params(), &tape);
        assert_eq!(st.phase, GenPhase::WaitingCheckpoint { until: 19 });
        // Stale decisions do nothing.
        generator_step(&mut st, GenEvent::Decision(bot), &view, &params(), &tape);
        assert_eq!(st.curr_iter, 2);
    }
}
